#pragma once

#include <string>

#include "fg2e/tensor.hpp"

namespace fg2e {

// 8-bit RGB PNG I/O. Tensors are H×W×3 with values in [0,1]; writing clamps
// and rounds, reading maps bytes back to v/255.
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

}  // namespace fg2e
