#pragma once

#include <string>

#include "frmlp/spatial.hpp"

namespace frmlp::io {

/// FRV1 volume container: ASCII header line "FRV1 <C> <H> <W> <D> <dtype>"
/// then row-major little-endian raw values. dtype is f32, f64 or u16
/// (label maps are u16 with C == 1).
void write_volume(const std::string& path, const Tensor& volume);
Tensor read_volume(const std::string& path);

void write_labels(const std::string& path, const LabelMap& labels);
LabelMap read_labels(const std::string& path);

}  // namespace frmlp::io
