#pragma once

// Checkpoint file layout (all integers little-endian):
//   "BGCK"  u32 version  u32 entry_count
//   per entry: u32 name_len, name bytes (UTF-8), u32 rank, rank x u32 extents,
//              numel x f32 values

#include <filesystem>
#include <string>
#include <vector>

#include "bigen/tensor.hpp"

namespace bigen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor<float> value;

    bool operator==(const NamedTensor&) const = default;
};

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace bigen
