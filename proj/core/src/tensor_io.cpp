#include "handsplat/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace handsplat {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'C', 'K'};

template <typename U>
U to_little(U value) {
    if constexpr (std::endian::native == std::endian::little) {
        return value;
    } else {
        unsigned char bytes[sizeof(U)];
        std::memcpy(bytes, &value, sizeof(U));
        for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(bytes[i], bytes[sizeof(U) - 1 - i]);
        std::memcpy(&value, bytes, sizeof(U));
        return value;
    }
}

template <typename U>
void put(std::ofstream& out, U value) {
    value = to_little(value);
    out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::ifstream& in, const std::string& path) {
    U value;
    in.read(reinterpret_cast<char*>(&value), sizeof(U));
    if (!in) throw ValidationError("truncated tensor file '" + path + "'");
    return to_little(value);
}

std::string get_string(std::ifstream& in, std::size_t size, const std::string& path) {
    if (size > (std::size_t(1) << 32)) throw ValidationError("corrupt string length in '" + path + "'");
    std::string s(size, '\0');
    in.read(s.data(), static_cast<std::streamsize>(size));
    if (!in) throw ValidationError("truncated tensor file '" + path + "'");
    return s;
}

}  // namespace

const MatX<double>& TensorFile::at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("tensor '" + name + "' missing from file");
    return it->second;
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    put<std::uint32_t>(out, TensorFile::kVersion);
    put<std::uint64_t>(out, file.metadata.size());
    out.write(file.metadata.data(), static_cast<std::streamsize>(file.metadata.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& [name, tensor] : file.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(tensor.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(tensor.cols()));
        for (Eigen::Index i = 0; i < tensor.size(); ++i) put<double>(out, tensor.data()[i]);
    }
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

TensorFile read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open tensor file '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("'" + path + "' is not a checkpoint file");
    const auto version = get<std::uint32_t>(in, path);
    if (version != TensorFile::kVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " in '" + path + "'");
    }
    TensorFile file;
    file.metadata = get_string(in, get<std::uint64_t>(in, path), path);
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t t = 0; t < count; ++t) {
        std::string name = get_string(in, get<std::uint32_t>(in, path), path);
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (std::uint64_t(1) << 31)) {
            throw ValidationError("corrupt tensor shape for '" + name + "' in '" + path + "'");
        }
        MatX<double> tensor(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < tensor.size(); ++i) tensor.data()[i] = get<double>(in, path);
        file.tensors.emplace(std::move(name), std::move(tensor));
    }
    return file;
}

}  // namespace handsplat
