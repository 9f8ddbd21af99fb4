#include "cmsr/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace cmsr {

namespace {

void require_pair(const ImagePlane& a, const ImagePlane& b, const char* what) {
  if (a.rank() != 3 || a.channels() != 1 || a.shape() != b.shape()) {
    throw InvalidArgument(std::string(what) + ": planes must be [1, H, W] with identical size");
  }
  if (a.empty()) throw InvalidArgument(std::string(what) + ": empty plane");
}

double to_db(double mse) {
  if (mse == 0.0) return kInfinity;
  return 10.0 * std::log10(kMaxIntensity * kMaxIntensity / mse);
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable filtering of an h x w double image.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas rooted at the finite samples).
void dt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (std::isinf(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInfinity;
      z[1] = kInfinity;
      continue;
    }
    double s = 0.0;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInfinity;
  }
  if (k < 0) {
    std::fill(d, d + n, kInfinity);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    const double dq = q - p;
    d[q] = dq * dq + f[p];
  }
}

}  // namespace

std::size_t EdgeMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
}

ImagePlane shave(const ImagePlane& plane, int border) {
  if (border == 0) return plane;
  const int h = plane.height() - 2 * border;
  const int w = plane.width() - 2 * border;
  if (h <= 0 || w <= 0) throw InvalidArgument("shave leaves no pixels");
  ImagePlane out = ImagePlane::plane(h, w);
  for (int y = 0; y < h; ++y) std::copy_n(plane.row(0, y + border) + border, w, out.row(0, y));
  return out;
}

EdgeMask shave(const EdgeMask& mask, int border) {
  if (border == 0) return mask;
  EdgeMask out;
  out.height = mask.height - 2 * border;
  out.width = mask.width - 2 * border;
  out.radius = mask.radius;
  if (out.height <= 0 || out.width <= 0) throw InvalidArgument("shave leaves no pixels");
  out.inside.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.inside[static_cast<std::size_t>(y) * out.width + x] = mask.at(y + border, x + border);
    }
  }
  return out;
}

double psnr(const ImagePlane& truth, const ImagePlane& pred) {
  require_pair(truth, pred, "psnr");
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = (static_cast<double>(truth[i]) - pred[i]) * kMaxIntensity;
    sum += d * d;
  }
  return to_db(sum / static_cast<double>(truth.size()));
}

double ssim(const ImagePlane& truth, const ImagePlane& pred) {
  require_pair(truth, pred, "ssim");
  constexpr int kWindow = 11;
  const int h = truth.height();
  const int w = truth.width();
  if (h < kWindow || w < kWindow) throw InvalidArgument("ssim: planes smaller than the 11x11 window");
  const auto k = gaussian_window(kWindow, 1.5);
  const std::size_t n = truth.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = truth[i] * kMaxIntensity;
    b[i] = pred[i] * kMaxIntensity;
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, k);
  const auto mu_b = filter_valid(b, h, w, k);
  const auto s_aa = filter_valid(aa, h, w, k);
  const auto s_bb = filter_valid(bb, h, w, k);
  const auto s_ab = filter_valid(ab, h, w, k);
  const double c1 = std::pow(0.01 * kMaxIntensity, 2);
  const double c2 = std::pow(0.03 * kMaxIntensity, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = s_aa[i] - mu_a[i] * mu_a[i];
    const double vb = s_bb[i] - mu_b[i] * mu_b[i];
    const double cov = s_ab[i] - mu_a[i] * mu_b[i];
    total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> set, int height, int width) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (set.size() != n) throw InvalidArgument("distance transform: mask size mismatch");
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = set[i] ? 0.0 : kInfinity;

  const int longest = std::max(height, width);
  std::vector<int> v(static_cast<std::size_t>(longest));
  std::vector<double> z(static_cast<std::size_t>(longest) + 1);
  std::vector<double> f(static_cast<std::size_t>(longest));
  std::vector<double> d(static_cast<std::size_t>(longest));

  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * width + x];
    dt_1d(f.data(), d.data(), height, v, z);
    for (int y = 0; y < height; ++y) grid[static_cast<std::size_t>(y) * width + x] = d[static_cast<std::size_t>(y)];
  }
  for (int y = 0; y < height; ++y) {
    double* row = grid.data() + static_cast<std::size_t>(y) * width;
    std::copy_n(row, width, f.data());
    dt_1d(f.data(), row, width, v, z);
  }
  return grid;
}

EdgeMask edge_mask(const ImagePlane& boundary, double radius) {
  return edge_mask_union(std::span<const ImagePlane>(&boundary, 1), radius);
}

EdgeMask edge_mask_union(std::span<const ImagePlane> boundaries, double radius) {
  if (boundaries.empty()) throw EmptyMask();
  const int h = boundaries[0].height();
  const int w = boundaries[0].width();
  EdgeMask mask;
  mask.height = h;
  mask.width = w;
  mask.radius = radius;
  mask.inside.assign(static_cast<std::size_t>(h) * w, 0);
  const double r2 = radius * radius;
  bool any = false;
  for (const auto& b : boundaries) {
    if (b.height() != h || b.width() != w) throw InvalidArgument("edge_mask: boundary sizes differ");
    std::vector<std::uint8_t> set(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      set[i] = b[i] >= 0.5f;
      any = any || set[i];
    }
    const auto d2 = squared_distance_transform(set, h, w);
    for (std::size_t i = 0; i < d2.size(); ++i) {
      if (d2[i] < r2) mask.inside[i] = 1;
    }
  }
  if (!any) throw EmptyMask();
  return mask;
}

double epsnr(const ImagePlane& truth, const ImagePlane& pred, const EdgeMask& mask) {
  require_pair(truth, pred, "epsnr");
  if (mask.height != truth.height() || mask.width != truth.width()) {
    throw InvalidArgument("epsnr: mask size differs from planes");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!mask.inside[i]) continue;
    const double d = (static_cast<double>(truth[i]) - pred[i]) * kMaxIntensity;
    sum += d * d;
    ++count;
  }
  if (count == 0) throw EmptyMask();
  return to_db(sum / static_cast<double>(count));
}

}  // namespace cmsr
