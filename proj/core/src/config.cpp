#include "handsplat/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>

namespace handsplat {

using nlohmann::json;

namespace {

using FieldPtr = std::variant<int*, double*, bool*, std::uint64_t*>;

struct Field {
    const char* name;
    FieldPtr ptr;
};

std::vector<Field> fields(DataConfig& c) {
    return {{"seed", &c.seed},
            {"gaussians", &c.gaussians},
            {"cameras", &c.cameras},
            {"train_cameras", &c.train_cameras},
            {"frames", &c.frames},
            {"test_frames", &c.test_frames},
            {"width", &c.width},
            {"height", &c.height},
            {"rig_radius", &c.rig_radius},
            {"focal_ratio", &c.focal_ratio},
            {"articulation", &c.articulation},
            {"ou_theta", &c.ou_theta},
            {"ou_sigma", &c.ou_sigma},
            {"grip_fraction", &c.grip_fraction},
            {"effect_strength", &c.effect_strength}};
}

std::vector<Field> fields(RunConfig& c) {
    auto& m = c.model;
    auto& a = c.model.ablations;
    return {{"seed", &c.seed},
            {"iterations", &c.iterations},
            {"embedding_dim", &m.embedding_dim},
            {"hidden_width", &m.hidden_width},
            {"hidden_layers", &m.hidden_layers},
            {"dynamic_bones", &m.dynamic_bones},
            {"tau", &m.tau},
            {"delta_scale", &m.delta_scale},
            {"phi_hidden", &m.phi_hidden},
            {"phi_out", &m.phi_out},
            {"posed_offsets", &m.posed_offsets},
            {"consistency_coord_grad", &m.consistency_coord_grad},
            {"no_embeddings", &a.no_embeddings},
            {"no_intra_pose", &a.no_intra_pose},
            {"no_inter_pose", &a.no_inter_pose},
            {"no_static_bones", &a.no_static_bones},
            {"no_dynamic_bones", &a.no_dynamic_bones},
            {"no_t", &a.no_t},
            {"no_delta", &a.no_delta},
            {"delta", &c.delta},
            {"ema_decay", &c.ema_decay},
            {"lambda_mask", &c.lambda_mask},
            {"lambda_ssim", &c.lambda_ssim},
            {"lambda_con", &c.lambda_con},
            {"lambda_smooth", &c.lambda_smooth},
            {"smooth_k", &c.smooth_k},
            {"freeze_phi", &c.freeze_phi},
            {"lr_network", &c.lr_network},
            {"lr_embedding", &c.lr_embedding},
            {"lr_position", &c.lr_position},
            {"lr_rotation", &c.lr_rotation},
            {"lr_scale", &c.lr_scale},
            {"lr_color", &c.lr_color},
            {"lr_opacity", &c.lr_opacity},
            {"densify_from", &c.densify_from},
            {"densify_until", &c.densify_until},
            {"densify_every", &c.densify_every},
            {"densify_grad_threshold", &c.densify_grad_threshold},
            {"densify_scale_threshold", &c.densify_scale_threshold},
            {"prune_opacity", &c.prune_opacity},
            {"max_gaussians", &c.max_gaussians},
            {"same_pose_prob", &c.same_pose_prob},
            {"checkpoint_every", &c.checkpoint_every},
            {"log_every", &c.log_every},
            {"threads", &c.threads},
            {"deterministic", &c.deterministic}};
}

template <typename C>
std::string dump(C config) {
    json doc = json::object();
    for (const auto& f : fields(config)) {
        std::visit([&](auto* p) { doc[f.name] = *p; }, f.ptr);
    }
    return doc.dump(2);
}

void assign_json(const Field& f, const json& value) {
    try {
        std::visit(
            [&](auto* p) {
                using V = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<V, bool>) {
                    if (!value.is_boolean()) throw ValidationError("");
                } else if constexpr (std::is_same_v<V, double>) {
                    if (!value.is_number()) throw ValidationError("");
                } else {
                    if (!value.is_number_integer()) throw ValidationError("");
                }
                *p = value.get<V>();
            },
            f.ptr);
    } catch (const std::exception&) {
        throw ValidationError(std::string("config field '") + f.name + "' has the wrong type");
    }
}

template <typename C>
C parse(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    C config;
    auto table = fields(config);
    for (const auto& [key, value] : doc.items()) {
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.name; });
        if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
        assign_json(*it, value);
    }
    validate(config);
    return config;
}

template <typename V>
bool parse_value(const std::string& text, V& out) {
    if constexpr (std::is_same_v<V, bool>) {
        if (text == "true" || text == "1") {
            out = true;
            return true;
        }
        if (text == "false" || text == "0") {
            out = false;
            return true;
        }
        return false;
    } else if constexpr (std::is_same_v<V, double>) {
        try {
            std::size_t used = 0;
            out = std::stod(text, &used);
            return used == text.size();
        } catch (const std::exception&) {
            return false;
        }
    } else {
        const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
        return res.ec == std::errc() && res.ptr == text.data() + text.size();
    }
}

template <typename C>
void override_field(C& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    for (const auto& f : fields(config)) {
        if (key != f.name) continue;
        const bool ok = std::visit([&](auto* p) { return parse_value(value, *p); }, f.ptr);
        if (!ok) throw ValidationError("cannot parse value '" + value + "' for config key '" + key + "'");
        return;
    }
    throw ValidationError("unknown config key '" + key + "'");
}

void check(bool ok, const char* field, const char* rule) {
    if (!ok) throw ValidationError(std::string("config field '") + field + "' " + rule);
}

}  // namespace

void validate(const DataConfig& c) {
    check(c.gaussians > 0, "gaussians", "must be positive");
    check(c.cameras > 0, "cameras", "must be positive");
    check(c.train_cameras > 0 && c.train_cameras <= c.cameras, "train_cameras", "must be in [1, cameras]");
    check(c.frames > 0, "frames", "must be positive");
    check(c.test_frames >= 0 && c.test_frames < c.frames, "test_frames", "must be in [0, frames)");
    check(c.width > 0 && c.width <= 4096, "width", "must be in [1, 4096]");
    check(c.height > 0 && c.height <= 4096, "height", "must be in [1, 4096]");
    check(c.rig_radius > 0.05, "rig_radius", "must exceed 0.05 m");
    check(c.focal_ratio > 0.0, "focal_ratio", "must be positive");
    check(c.articulation >= 0.0 && c.articulation <= 1.0, "articulation", "must be in [0, 1]");
    check(c.ou_theta > 0.0 && c.ou_theta <= 1.0, "ou_theta", "must be in (0, 1]");
    check(c.ou_sigma >= 0.0, "ou_sigma", "must be non-negative");
    check(c.grip_fraction >= 0.0 && c.grip_fraction <= 1.0, "grip_fraction", "must be in [0, 1]");
    check(c.effect_strength >= 0.0, "effect_strength", "must be non-negative");
}

void validate(const RunConfig& c) {
    const auto& m = c.model;
    check(c.iterations >= 0, "iterations", "must be non-negative");
    check(m.embedding_dim > 0, "embedding_dim", "must be positive");
    check(m.hidden_width > 0, "hidden_width", "must be positive");
    check(m.hidden_layers >= 0, "hidden_layers", "must be non-negative");
    check(m.dynamic_bones > 0, "dynamic_bones", "must be positive");
    check(m.tau > 0.0, "tau", "must be positive");
    check(m.delta_scale >= 0.0, "delta_scale", "must be non-negative");
    check(m.phi_hidden > 0, "phi_hidden", "must be positive");
    check(m.phi_out > 0, "phi_out", "must be positive");
    check(c.delta > 0.0, "delta", "must be positive");
    check(c.ema_decay >= 0.0 && c.ema_decay < 1.0, "ema_decay", "must be in [0, 1)");
    for (const auto& [v, name] : {std::pair{c.lambda_mask, "lambda_mask"}, {c.lambda_ssim, "lambda_ssim"},
                                  {c.lambda_con, "lambda_con"}, {c.lambda_smooth, "lambda_smooth"}}) {
        check(v >= 0.0, name, "must be non-negative");
    }
    check(c.smooth_k >= 1, "smooth_k", "must be at least 1");
    for (const auto& [v, name] : {std::pair{c.lr_network, "lr_network"}, {c.lr_embedding, "lr_embedding"},
                                  {c.lr_position, "lr_position"}, {c.lr_rotation, "lr_rotation"},
                                  {c.lr_scale, "lr_scale"}, {c.lr_color, "lr_color"}, {c.lr_opacity, "lr_opacity"}}) {
        check(v >= 0.0, name, "must be non-negative");
    }
    check(c.densify_every > 0, "densify_every", "must be positive");
    check(c.densify_grad_threshold > 0.0, "densify_grad_threshold", "must be positive");
    check(c.prune_opacity >= 0.0 && c.prune_opacity < 1.0, "prune_opacity", "must be in [0, 1)");
    check(c.max_gaussians > 0, "max_gaussians", "must be positive");
    check(c.same_pose_prob >= 0.0 && c.same_pose_prob <= 1.0, "same_pose_prob", "must be in [0, 1]");
    check(c.checkpoint_every >= 0, "checkpoint_every", "must be non-negative");
    check(c.log_every > 0, "log_every", "must be positive");
    check(c.threads >= 0, "threads", "must be non-negative");
}

std::string to_json(const DataConfig& config) { return dump(config); }
std::string to_json(const RunConfig& config) { return dump(config); }
DataConfig data_config_from_json(const std::string& text) { return parse<DataConfig>(text); }
RunConfig run_config_from_json(const std::string& text) { return parse<RunConfig>(text); }
void apply_override(DataConfig& config, const std::string& assignment) { override_field(config, assignment); }
void apply_override(RunConfig& config, const std::string& assignment) { override_field(config, assignment); }

void apply_ablation_preset(RunConfig& config, const std::string& preset) {
    auto& a = config.model.ablations;
    if (preset == "full") return;
    if (preset == "no_scs") {
        a.no_intra_pose = true;
        a.no_inter_pose = true;
        return;
    }
    const std::pair<const char*, bool*> flags[] = {
        {"no_embeddings", &a.no_embeddings},       {"no_intra_pose", &a.no_intra_pose},
        {"no_inter_pose", &a.no_inter_pose},       {"no_static_bones", &a.no_static_bones},
        {"no_dynamic_bones", &a.no_dynamic_bones}, {"no_t", &a.no_t},
        {"no_delta", &a.no_delta}};
    for (const auto& [name, flag] : flags) {
        if (preset == name) {
            *flag = true;
            return;
        }
    }
    throw ValidationError("unknown ablation preset '" + preset + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace handsplat
