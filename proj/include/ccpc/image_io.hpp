// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "ccpc/tensor.hpp"

namespace ccpc::io {

/// Reads an 8- or 16-bit PNG (gray, RGB, palette; alpha dropped) as a
/// 1 x 3 x H x W tensor in [0, 1]. Throws IoError.
Tensor<float> read_png(const std::string& path);

/// Writes sample 0 as 8-bit RGB after clamping and rounding. Throws IoError.
void write_png(const std::string& path, const Tensor<float>& x);

}  // namespace ccpc::io
