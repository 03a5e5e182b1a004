#pragma once

#include "clipstrike/tensor.hpp"

#include <filesystem>

namespace clipstrike {

/// Decodes a PNG or JPEG file (told apart by signature) into a 1×3×H×W tensor with values in [0,1].
/// Grayscale is expanded to three channels, alpha is dropped, 16-bit PNGs are
/// rescaled. Throws std::runtime_error on malformed files.
Tensor<Real> read_image(const std::filesystem::path& path);

Tensor<Real> read_png(const std::filesystem::path& path);
Tensor<Real> read_jpeg(const std::filesystem::path& path);

/// Writes sample `index` of a N×C×H×W tensor (C = 1 or 3) as an 8-bit PNG.
/// Values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Tensor<Real>& image, Index index = 0);

}  // namespace clipstrike
