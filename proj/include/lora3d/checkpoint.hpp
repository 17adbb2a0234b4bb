#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lora3d/tensor.hpp"

namespace lora3d {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

// One serialized tensor: extents, element precision, raw little-endian bytes.
struct NamedTensor {
    std::vector<std::uint64_t> extents;
    DType dtype = DType::f32;
    std::string raw;

    std::size_t numel() const;
    static NamedTensor from(const Tensor& t);
    static NamedTensor from(const TensorD& t);
    Tensor to_f32() const;
};

// Named-tensor table plus training metadata. File layout ("L3CK" format,
// version 1, all integers little-endian):
//   magic "L3CK" | version u32 | metadata length u32 + UTF-8 text |
//   tensor count u32 | per tensor in lexicographic name order:
//   name length u16 + name | rank u8 | extents u64 each | dtype u8 | raw data
// Metadata text is "key = value" lines sorted by key.
struct Checkpoint {
    std::map<std::string, std::string> metadata;
    std::map<std::string, NamedTensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin);

}  // namespace lora3d
