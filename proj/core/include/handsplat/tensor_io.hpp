#pragma once

#include "handsplat/types.hpp"

#include <map>
#include <string>

namespace handsplat {

// Named 2D tensors plus a free-form metadata string. On disk: "HSCK", u32
// version, u64 metadata length + bytes, u32 tensor count, then per tensor
// u32 name length + name, u64 rows, u64 cols, rows*cols f64 values. All
// integers and floats little-endian.
struct TensorFile {
    static constexpr std::uint32_t kVersion = 1;

    std::string metadata;
    std::map<std::string, MatX<double>> tensors;

    const MatX<double>& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

void write_tensor_file(const std::string& path, const TensorFile& file);
// Throws ValidationError on a bad magic, unknown version or truncation.
TensorFile read_tensor_file(const std::string& path);

}  // namespace handsplat
