#pragma once

#include <string>
#include <utility>
#include <vector>

#include "frmlp/tensor.hpp"

namespace frmlp::io {

/// FRMC container: magic "FRMC", u32 version, u32 tensor count; per tensor a
/// u16 name length, UTF-8 name, u8 dtype code (0 = f32, 1 = f64), u8 rank,
/// u32 extents, then the little-endian payload; trailing CRC32 of all
/// preceding bytes. Run metadata (config hash, iteration counter, optimizer
/// step) travels as reserved "__meta.*" scalar tensors.
struct Checkpoint {
    std::uint32_t version = 1;
    std::uint32_t config_hash = 0;
    std::int64_t iteration = 0;
    std::int64_t optimizer_step = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;  // params + optimizer state

    Tensor find(const std::string& name) const;
    bool contains(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a over a canonical string form; used for the config hash.
std::uint32_t fingerprint(const std::string& text);

}  // namespace frmlp::io
