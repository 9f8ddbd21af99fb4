#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cmsr/tensor.hpp"

namespace cmsr {

// Peak value of the 8-bit domain the metrics are reported in.
inline constexpr double kMaxIntensity = 255.0;
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Pixels whose Euclidean distance to the nearest boundary pixel is < radius.
struct EdgeMask {
  int height = 0;
  int width = 0;
  double radius = 2.0;
  std::vector<std::uint8_t> inside;

  std::size_t count() const noexcept;
  bool at(int y, int x) const noexcept { return inside[static_cast<std::size_t>(y) * width + x] != 0; }
};

// Removes `border` pixels from every side.
ImagePlane shave(const ImagePlane& plane, int border);
EdgeMask shave(const EdgeMask& mask, int border);

// Planes hold values in [0, 1]; all metrics scale them by 255. Identical
// inputs give +inf.
double psnr(const ImagePlane& truth, const ImagePlane& pred);

// Gaussian 11x11 window (sigma 1.5), K1 = 0.01, K2 = 0.03, mean over valid
// window positions.
double ssim(const ImagePlane& truth, const ImagePlane& pred);

// Squared Euclidean distance from every pixel to the nearest set pixel
// (exact, separable lower-envelope transform). Infinite when nothing is set.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> set, int height, int width);

// Boundary binarized at 0.5. Throws EmptyMask when no boundary pixel exists.
EdgeMask edge_mask(const ImagePlane& boundary, double radius = 2.0);

// Union of the per-annotation masks.
EdgeMask edge_mask_union(std::span<const ImagePlane> boundaries, double radius = 2.0);

double epsnr(const ImagePlane& truth, const ImagePlane& pred, const EdgeMask& mask);

}  // namespace cmsr
