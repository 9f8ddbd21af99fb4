#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Written for clarity, not speed; none of them call the library's
// kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "cmsr/imaging.hpp"
#include "cmsr/ops.hpp"
#include "cmsr/random.hpp"

namespace oracle {

using cmsr::BasicConvSpec;
using cmsr::BasicDeconvSpec;
using cmsr::BasicTensor;
using cmsr::ImagePlane;

template <typename T>
BasicTensor<T> random_tensor(std::vector<int> shape, cmsr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.storage()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline ImagePlane random_plane(int h, int w, cmsr::Rng& rng) {
  return random_tensor<float>({1, h, w}, rng, 0.0, 1.0);
}

// Six nested loops straight from the definition.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& in, const BasicConvSpec<T>& spec) {
  const int k = spec.kernel_size;
  const bool same = spec.padding == cmsr::Padding::same;
  const int pad = same ? k / 2 : 0;
  const int oh = same ? in.height() : in.height() - k + 1;
  const int ow = same ? in.width() : in.width() - k + 1;
  BasicTensor<T> out({spec.out_channels, oh, ow});
  for (int o = 0; o < spec.out_channels; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = spec.has_bias() ? static_cast<double>(spec.bias[static_cast<std::size_t>(o)]) : 0.0;
        for (int c = 0; c < spec.in_channels; ++c) {
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const int sy = y + dy - pad;
              const int sx = x + dx - pad;
              if (sy < 0 || sx < 0 || sy >= in.height() || sx >= in.width()) continue;
              acc += static_cast<double>(in(c, sy, sx)) * static_cast<double>(spec.kernels(o, c, dy, dx));
            }
          }
        }
        out(o, y, x) = static_cast<T>(acc);
      }
    }
  }
  return out;
}

// Zero-insertion upsampling followed by the raw scatter of every kernel, then
// a crop of `spec.crop()` rows/columns from the top/left. Replicate borders are
// modelled by padding the LR input with its edge values before scattering.
template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& in, const BasicDeconvSpec<T>& spec) {
  const int s = spec.stride;
  const int n = spec.kernel_size;
  const int m = spec.border == cmsr::Border::replicate ? n : 0;  // LR margin
  const int h = in.height();
  const int w = in.width();
  const int big_h = s * (h + 2 * m - 1) + n;
  const int big_w = s * (w + 2 * m - 1) + n;
  std::vector<double> raw(static_cast<std::size_t>(spec.out_channels) * big_h * big_w, 0.0);
  for (int c = 0; c < spec.in_channels; ++c) {
    for (int i = -m; i < h + m; ++i) {
      for (int j = -m; j < w + m; ++j) {
        const double v = in(c, std::clamp(i, 0, h - 1), std::clamp(j, 0, w - 1));
        for (int o = 0; o < spec.out_channels; ++o) {
          for (int ty = 0; ty < n; ++ty) {
            for (int tx = 0; tx < n; ++tx) {
              const int ry = s * (i + m) + ty;
              const int rx = s * (j + m) + tx;
              raw[(static_cast<std::size_t>(o) * big_h + ry) * big_w + rx] +=
                  v * static_cast<double>(spec.kernels(c, o, ty, tx));
            }
          }
        }
      }
    }
  }
  const int off = s * m + spec.crop();
  BasicTensor<T> out({spec.out_channels, s * h, s * w});
  for (int o = 0; o < spec.out_channels; ++o) {
    for (int y = 0; y < s * h; ++y) {
      for (int x = 0; x < s * w; ++x) {
        out(o, y, x) = static_cast<T>(raw[(static_cast<std::size_t>(o) * big_h + y + off) * big_w + x + off] +
                                      spec.bias[static_cast<std::size_t>(o)]);
      }
    }
  }
  return out;
}

// Central differences of a scalar function with respect to every entry of
// `values` (modified in place and restored).
inline std::vector<double> numeric_gradient(std::span<double> values, const std::function<double()>& f,
                                            double step = 1e-5) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + step;
    const double up = f();
    values[i] = keep - step;
    const double down = f();
    values[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// |a - b| / max(|a|, |b|, floor). The floor keeps entries that are zero in
// both from producing 0/0 and treats round-off on tiny entries as absolute.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

template <typename T>
double sum_product(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

// Direct per-pixel 2-D weighted sum for resampling by num/den: output pixel
// j reads source coordinate j * den / num; the kernel is stretched by den/num
// when shrinking and its weights renormalized.
inline ImagePlane resize(const ImagePlane& src, int num, int den) {
  const double f = static_cast<double>(num) / den;
  const double k = std::min(1.0, f);
  const int oh = src.height() * num / den;
  const int ow = src.width() * num / den;
  auto weights = [&](double center, int size) {
    std::vector<std::pair<int, double>> w;
    double sum = 0.0;
    const int reach = static_cast<int>(std::ceil(2.0 / k)) + 1;
    const int c = static_cast<int>(std::floor(center));
    for (int i = c - reach; i <= c + reach; ++i) {
      const double v = k * cmsr::bicubic_weight(k * (i - center));
      if (v == 0.0) continue;
      w.emplace_back(std::clamp(i, 0, size - 1), v);
      sum += v;
    }
    if (f < 1.0) {
      for (auto& p : w) p.second /= sum;
    }
    return w;
  };
  ImagePlane out = ImagePlane::plane(oh, ow);
  for (int y = 0; y < oh; ++y) {
    const auto wy = weights(static_cast<double>(y) * den / num, src.height());
    for (int x = 0; x < ow; ++x) {
      const auto wx = weights(static_cast<double>(x) * den / num, src.width());
      double acc = 0.0;
      for (const auto& [iy, vy] : wy) {
        for (const auto& [ix, vx] : wx) acc += vy * vx * src(0, iy, ix);
      }
      out(0, y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

inline double mse255(const ImagePlane& g, const ImagePlane& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = 255.0 * (static_cast<double>(g[i]) - p[i]);
    s += d * d;
  }
  return s / static_cast<double>(g.size());
}

inline double psnr(const ImagePlane& g, const ImagePlane& p) {
  const double m = mse255(g, p);
  return m == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(255.0 * 255.0 / m);
}

inline double masked_psnr(const ImagePlane& g, const ImagePlane& p, const std::vector<std::uint8_t>& mask) {
  double s = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!mask[i]) continue;
    const double d = 255.0 * (static_cast<double>(g[i]) - p[i]);
    s += d * d;
    ++count;
  }
  const double m = s / count;
  return m == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(255.0 * 255.0 / m);
}

// SSIM evaluated window by window with explicit 11x11 Gaussian sums.
inline double ssim(const ImagePlane& g, const ImagePlane& p) {
  const int win = 11;
  double kern[11][11];
  double ksum = 0.0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double di = i - 5;
      const double dj = j - 5;
      kern[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      ksum += kern[i][j];
    }
  }
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + win <= g.height(); ++y) {
    for (int x = 0; x + win <= g.width(); ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double w = kern[i][j] / ksum;
          const double a = 255.0 * g(0, y + i, x + j);
          const double b = 255.0 * p(0, y + i, x + j);
          ma += w * a;
          mb += w * b;
          saa += w * a * a;
          sbb += w * b * b;
          sab += w * a * b;
        }
      }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

// Nearest set pixel by exhaustive search; returns squared distances.
inline std::vector<double> squared_distance(const std::vector<std::uint8_t>& set, int h, int w) {
  std::vector<double> d(set.size(), std::numeric_limits<double>::infinity());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
          if (!set[static_cast<std::size_t>(v) * w + u]) continue;
          const double dd = static_cast<double>((y - v) * (y - v) + (x - u) * (x - u));
          auto& cell = d[static_cast<std::size_t>(y) * w + x];
          cell = std::min(cell, dd);
        }
      }
    }
  }
  return d;
}

inline std::vector<std::uint8_t> edge_mask(const ImagePlane& boundary, double radius) {
  std::vector<std::uint8_t> set(boundary.size());
  for (std::size_t i = 0; i < set.size(); ++i) set[i] = boundary[i] >= 0.5f;
  const auto d = squared_distance(set, boundary.height(), boundary.width());
  std::vector<std::uint8_t> mask(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) mask[i] = std::sqrt(d[i]) < radius;
  return mask;
}

}  // namespace oracle
