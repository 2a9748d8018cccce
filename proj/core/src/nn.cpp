#include "handsplat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace handsplat {

template <typename T>
Mlp<T>::Mlp(std::vector<int> widths, std::uint64_t seed, T gate_init) : widths_(std::move(widths)), gate_(gate_init) {
    require(widths_.size() >= 2, "Mlp needs at least input and output widths");
    for (int w : widths_) require(w > 0, "Mlp widths must be positive");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int in = widths_[l];
        const int out = widths_[l + 1];
        const bool head = l + 2 == widths_.size();
        // He-uniform for ReLU layers, Glorot-uniform for the linear head.
        const double bound = head ? std::sqrt(6.0 / (in + out)) : std::sqrt(6.0 / in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        MatX<T> w(in, out);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
        weights_.push_back(std::move(w));
        biases_.push_back(RowVecX<T>::Zero(out));
    }
}

template <typename T>
std::size_t Mlp<T>::parameter_count(const std::vector<int>& widths) {
    std::size_t count = 1;  // gate
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        count += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
    }
    return count;
}

template <typename T>
std::size_t Mlp<T>::parameter_count() const {
    return parameter_count(widths_);
}

template <typename T>
MatX<T> Mlp<T>::forward(const MatX<T>& input, MlpTape<T>* tape) const {
    if (input.cols() != input_width()) {
        throw ContractViolation("Mlp::forward: input width " + std::to_string(input.cols()) + " != " +
                                std::to_string(input_width()));
    }
    if (tape) {
        tape->activations.clear();
        tape->activations.push_back(input);
    }
    MatX<T> x = input;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        MatX<T> y = x * weights_[l];
        y.rowwise() += biases_[l];
        if (l + 1 < weights_.size()) {
            y = y.cwiseMax(T(0));
            if (tape) tape->activations.push_back(y);
        } else if (tape) {
            tape->head = y;
        }
        x = std::move(y);
    }
    if (tape) tape->recorded = true;
    return gate_ * x;
}

template <typename T>
VecX<T> Mlp<T>::forward(const VecX<T>& input) const {
    MatX<T> row = input.transpose();
    return forward(row).row(0).transpose();
}

template <typename T>
MatX<T> Mlp<T>::backward(const MlpTape<T>& tape, const MatX<T>& output_cotangent, MlpGrads<T>& grads) const {
    if (!tape.recorded) throw ContractViolation("Mlp::backward called without a recorded forward pass");
    if (output_cotangent.rows() != tape.head.rows() || output_cotangent.cols() != output_width()) {
        throw ContractViolation("Mlp::backward: cotangent shape mismatch");
    }
    if (grads.weights.size() != weights_.size()) throw ContractViolation("Mlp::backward: gradient buffer mismatch");
    grads.gate += (tape.head.array() * output_cotangent.array()).sum();
    MatX<T> delta = gate_ * output_cotangent;
    for (std::size_t l = weights_.size(); l-- > 0;) {
        const MatX<T>& x = tape.activations[l];
        grads.weights[l].noalias() += x.transpose() * delta;
        grads.biases[l] += delta.colwise().sum();
        MatX<T> dx = delta * weights_[l].transpose();
        if (l > 0) dx = (x.array() > T(0)).select(dx, T(0));
        delta = std::move(dx);
    }
    return delta;
}

template <typename T>
std::vector<std::pair<std::string, std::span<T>>> Mlp<T>::parameters() {
    std::vector<std::pair<std::string, std::span<T>>> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.emplace_back("w" + std::to_string(l),
                         std::span<T>(weights_[l].data(), static_cast<std::size_t>(weights_[l].size())));
        out.emplace_back("b" + std::to_string(l),
                         std::span<T>(biases_[l].data(), static_cast<std::size_t>(biases_[l].size())));
    }
    out.emplace_back("gate", std::span<T>(&gate_, 1));
    return out;
}

template <typename T>
std::vector<std::pair<std::string, std::span<const T>>> Mlp<T>::parameters() const {
    std::vector<std::pair<std::string, std::span<const T>>> out;
    for (auto& [name, span] : const_cast<Mlp<T>*>(this)->parameters()) out.emplace_back(name, span);
    return out;
}

template <typename T>
MlpGrads<T>::MlpGrads(const Mlp<T>& net) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        weights.push_back(MatX<T>::Zero(net.weight(l).rows(), net.weight(l).cols()));
        biases.push_back(RowVecX<T>::Zero(net.bias(l).size()));
    }
}

template <typename T>
void MlpGrads<T>::zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
    gate = T(0);
}

template <typename T>
std::vector<std::span<T>> MlpGrads<T>::spans() {
    std::vector<std::span<T>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.emplace_back(weights[l].data(), static_cast<std::size_t>(weights[l].size()));
        out.emplace_back(biases[l].data(), static_cast<std::size_t>(biases[l].size()));
    }
    out.emplace_back(&gate, 1);
    return out;
}

template <typename T>
void AdamState<T>::resize(std::size_t n) {
    m.assign(n, T(0));
    v.assign(n, T(0));
    step = 0;
}

template <typename T>
void AdamState<T>::remap_rows(const std::vector<std::int64_t>& source, std::size_t width) {
    std::vector<T> new_m(source.size() * width, T(0));
    std::vector<T> new_v(source.size() * width, T(0));
    for (std::size_t r = 0; r < source.size(); ++r) {
        if (source[r] < 0) continue;
        const std::size_t from = static_cast<std::size_t>(source[r]) * width;
        if (from + width > m.size()) continue;
        std::copy_n(m.begin() + from, width, new_m.begin() + r * width);
        std::copy_n(v.begin() + from, width, new_v.begin() + r * width);
    }
    m = std::move(new_m);
    v = std::move(new_v);
}

template <typename T>
bool adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& config) {
    if (params.size() != grads.size()) throw ContractViolation("adam_step: parameter/gradient size mismatch");
    if (state.m.size() != params.size()) {
        if (state.m.empty() && state.step == 0) {
            state.resize(params.size());
        } else {
            throw ContractViolation("adam_step: optimizer state shape mismatch");
        }
    }
    for (T g : grads) {
        if (!std::isfinite(static_cast<double>(g))) {
            ++state.skipped;
            return false;
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= static_cast<T>(config.lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
    return true;
}

template class Mlp<float>;
template class Mlp<double>;
template struct MlpGrads<float>;
template struct MlpGrads<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template bool adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, const AdamConfig&);
template bool adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, const AdamConfig&);

}  // namespace handsplat
