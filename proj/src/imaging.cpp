#include "cmsr/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "cmsr/random.hpp"

namespace cmsr {

namespace {

// BT.601 studio swing, RGB in [0, 1] -> code values.
constexpr double kToYcc[3][3] = {
    {65.481, 128.553, 24.966},
    {-37.797, -74.203, 112.0},
    {112.0, -93.786, -18.214},
};
constexpr double kYccOffset[3] = {16.0, 128.0, 128.0};

std::array<std::array<double, 3>, 3> inverse_ycc() {
  const auto& m = kToYcc;
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  std::array<std::array<double, 3>, 3> inv{};
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// One output sample: source indices (unclamped) and weights.
struct Taps {
  int first = 0;
  std::vector<double> weights;
};

std::vector<Taps> resample_taps(int in_size, int out_size, Ratio factor) {
  const double f = factor.value();
  const double step = static_cast<double>(factor.den) / factor.num;
  const double kscale = f < 1.0 ? f : 1.0;
  const double support = 2.0 / kscale;
  std::vector<Taps> taps(static_cast<std::size_t>(out_size));
  for (int j = 0; j < out_size; ++j) {
    const double center = j * step;
    const int lo = static_cast<int>(std::floor(center - support)) + 1;
    const int hi = static_cast<int>(std::ceil(center + support)) - 1;
    Taps& t = taps[static_cast<std::size_t>(j)];
    t.first = lo;
    double sum = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double w = kscale * bicubic_weight(kscale * (i - center));
      t.weights.push_back(w);
      sum += w;
    }
    if (f < 1.0) {
      for (double& w : t.weights) w /= sum;
    }
  }
  (void)in_size;
  return taps;
}

ImagePlane transpose(const ImagePlane& p) {
  ImagePlane out = ImagePlane::plane(p.width(), p.height());
  for (int y = 0; y < p.height(); ++y) {
    for (int x = 0; x < p.width(); ++x) out(0, x, y) = p(0, y, x);
  }
  return out;
}

// Resamples along x only.
ImagePlane resample_rows(const ImagePlane& p, int out_w, Ratio factor) {
  const auto taps = resample_taps(p.width(), out_w, factor);
  ImagePlane out = ImagePlane::plane(p.height(), out_w);
  const int w = p.width();
  for (int y = 0; y < p.height(); ++y) {
    const float* src = p.row(0, y);
    float* dst = out.row(0, y);
    for (int j = 0; j < out_w; ++j) {
      const Taps& t = taps[static_cast<std::size_t>(j)];
      double acc = 0.0;
      for (std::size_t k = 0; k < t.weights.size(); ++k) {
        const int i = std::clamp(t.first + static_cast<int>(k), 0, w - 1);
        acc += t.weights[k] * src[i];
      }
      dst[j] = static_cast<float>(acc);
    }
  }
  return out;
}

void require_plane(const ImagePlane& p, const char* what) {
  if (p.rank() != 3 || p.channels() != 1) {
    throw InvalidArgument(std::string(what) + " expects a [1, H, W] plane");
  }
}

ImagePlane crop(const ImagePlane& p, int y0, int x0, int h, int w) {
  ImagePlane out = ImagePlane::plane(h, w);
  for (int y = 0; y < h; ++y) std::copy_n(p.row(0, y0 + y) + x0, w, out.row(0, y));
  return out;
}

ImagePlane rotate90(const ImagePlane& p) {
  // Counter-clockwise: out(y, x) = in(x, W - 1 - y).
  const int h = p.height();
  const int w = p.width();
  ImagePlane out = ImagePlane::plane(w, h);
  for (int y = 0; y < w; ++y) {
    for (int x = 0; x < h; ++x) out(0, y, x) = p(0, x, w - 1 - y);
  }
  return out;
}

ImagePlane hflip(const ImagePlane& p) {
  ImagePlane out = p;
  for (int y = 0; y < p.height(); ++y) std::reverse(out.row(0, y), out.row(0, y) + p.width());
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

YCbCrPlanes rgb_to_ycbcr(const Image8& image) {
  YCbCrPlanes out{ImagePlane::plane(image.height, image.width),
                  ImagePlane::plane(image.height, image.width),
                  ImagePlane::plane(image.height, image.width)};
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double rgb[3];
      for (int c = 0; c < 3; ++c) {
        rgb[c] = image.at(y, x, image.channels == 3 ? c : 0) / 255.0;
      }
      ImagePlane* planes[3] = {&out.y, &out.cb, &out.cr};
      for (int r = 0; r < 3; ++r) {
        const double v =
            kYccOffset[r] + kToYcc[r][0] * rgb[0] + kToYcc[r][1] * rgb[1] + kToYcc[r][2] * rgb[2];
        (*planes[r])(0, y, x) = static_cast<float>(v / 255.0);
      }
    }
  }
  return out;
}

Image8 ycbcr_to_rgb(const YCbCrPlanes& planes) {
  static const auto inv = inverse_ycc();
  Image8 out;
  out.height = planes.y.height();
  out.width = planes.y.width();
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const double ycc[3] = {planes.y(0, y, x) * 255.0 - kYccOffset[0],
                             planes.cb(0, y, x) * 255.0 - kYccOffset[1],
                             planes.cr(0, y, x) * 255.0 - kYccOffset[2]};
      for (int c = 0; c < 3; ++c) {
        const double v = inv[c][0] * ycc[0] + inv[c][1] * ycc[1] + inv[c][2] * ycc[2];
        out.at(y, x, c) = to_byte(v * 255.0);
      }
    }
  }
  return out;
}

Image8 plane_to_gray8(const ImagePlane& plane) {
  Image8 out;
  out.height = plane.height();
  out.width = plane.width();
  out.channels = 1;
  out.pixels.resize(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) {
    out.pixels[i] = to_byte(std::clamp(static_cast<double>(plane[i]), 0.0, 1.0) * 255.0);
  }
  return out;
}

ImagePlane gray8_to_plane(const Image8& image) {
  ImagePlane out = ImagePlane::plane(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) out(0, y, x) = image.at(y, x, 0) / 255.0f;
  }
  return out;
}

double bicubic_weight(double x, double a) {
  const double t = std::abs(x);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

ImagePlane resize_bicubic(const ImagePlane& plane, Ratio factor) {
  require_plane(plane, "resize_bicubic");
  if (factor.num <= 0 || factor.den <= 0) throw InvalidArgument("resize factor must be positive");
  const long out_h = static_cast<long>(plane.height()) * factor.num / factor.den;
  const long out_w = static_cast<long>(plane.width()) * factor.num / factor.den;
  if (out_h < 1 || out_w < 1) throw InvalidArgument("resize output would be empty");
  if (factor.num == factor.den) return plane;
  ImagePlane tmp = resample_rows(plane, static_cast<int>(out_w), factor);
  return transpose(resample_rows(transpose(tmp), static_cast<int>(out_h), factor));
}

ImagePlane crop_to_multiple(const ImagePlane& plane, int scale) {
  require_plane(plane, "crop_to_multiple");
  const int h = plane.height() / scale * scale;
  const int w = plane.width() / scale * scale;
  if (h < scale || w < scale) throw InvalidArgument("image smaller than the scale factor");
  if (h == plane.height() && w == plane.width()) return plane;
  return crop(plane, 0, 0, h, w);
}

ImagePlane make_lr(const ImagePlane& hr, int scale) {
  if (hr.height() % scale != 0 || hr.width() % scale != 0) {
    throw InvalidArgument("make_lr: HR size must be a multiple of the scale; crop first");
  }
  return resize_bicubic(hr, Ratio{1, scale});
}

std::vector<TrainingTriplet> extract_patches(const TrainingTriplet& t, int scale, int lr_patch,
                                             int stride) {
  if (lr_patch <= 0 || stride <= 0) throw InvalidArgument("patch size and stride must be positive");
  const int h = t.lr.height();
  const int w = t.lr.width();
  if (lr_patch > h || lr_patch > w) {
    std::cerr << "warning: skipping " << h << "x" << w << " image smaller than patch " << lr_patch
              << "\n";
    return {};
  }
  if (t.hr.height() != h * scale || t.hr.width() != w * scale) {
    throw InvalidArgument("extract_patches: HR size is not scale x LR size");
  }
  const int hp = lr_patch * scale;
  std::vector<TrainingTriplet> out;
  for (int y = 0; y + lr_patch <= h; y += stride) {
    for (int x = 0; x + lr_patch <= w; x += stride) {
      TrainingTriplet p;
      p.lr = crop(t.lr, y, x, lr_patch, lr_patch);
      p.hr = crop(t.hr, y * scale, x * scale, hp, hp);
      for (const auto& b : t.boundaries) p.boundaries.push_back(crop(b, y * scale, x * scale, hp, hp));
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<int> AugmentFlags::variants() const {
  if (dihedral8) return {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> v{0};
  if (rot90) v.push_back(1);
  if (rot180) v.push_back(2);
  if (rot270) v.push_back(3);
  if (hflip) v.push_back(4);
  if (vflip) v.push_back(6);
  return v;
}

ImagePlane dihedral(const ImagePlane& plane, int transform) {
  if (transform < 0 || transform > 7) throw InvalidArgument("dihedral transform must be 0..7");
  ImagePlane out = transform >= 4 ? hflip(plane) : plane;
  for (int r = 0; r < transform % 4; ++r) out = rotate90(out);
  return out;
}

std::vector<TrainingTriplet> augment(const std::vector<TrainingTriplet>& patches,
                                     const AugmentFlags& flags) {
  const auto variants = flags.variants();
  std::vector<TrainingTriplet> out;
  out.reserve(patches.size() * variants.size());
  for (const auto& p : patches) {
    for (int v : variants) {
      if (v == 0) {
        out.push_back(p);
        continue;
      }
      TrainingTriplet t;
      t.lr = dihedral(p.lr, v);
      t.hr = dihedral(p.hr, v);
      for (const auto& b : p.boundaries) t.boundaries.push_back(dihedral(b, v));
      out.push_back(std::move(t));
    }
  }
  return out;
}

ImagePlane fallback_boundary(const ImagePlane& hr) {
  require_plane(hr, "fallback_boundary");
  const int h = hr.height();
  const int w = hr.width();
  std::vector<double> mag(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (hr(0, y, std::min(x + 1, w - 1)) - hr(0, y, std::max(x - 1, 0)));
      const double gy = 0.5 * (hr(0, std::min(y + 1, h - 1), x) - hr(0, std::max(y - 1, 0), x));
      mag[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  std::vector<double> sorted = mag;
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(sorted.size()))) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank), sorted.end());
  const double threshold = sorted[rank];

  std::vector<std::uint8_t> marked(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) marked[i] = mag[i] > 0.0 && mag[i] >= threshold;

  ImagePlane out = ImagePlane::plane(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool hit = false;
      for (int dy = -1; dy <= 1 && !hit; ++dy) {
        for (int dx = -1; dx <= 1 && !hit; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          hit = yy >= 0 && yy < h && xx >= 0 && xx < w && marked[static_cast<std::size_t>(yy) * w + xx];
        }
      }
      out(0, y, x) = hit ? 1.0f : 0.0f;
    }
  }
  return out;
}

std::vector<ImagePlane> boundary_targets(std::span<const ImagePlane> annotations,
                                         const ImagePlane& hr) {
  if (annotations.empty()) return {fallback_boundary(hr)};
  std::vector<ImagePlane> out;
  for (const auto& a : annotations) {
    if (a.shape() != hr.shape()) throw InvalidArgument("boundary annotation size differs from HR image");
    ImagePlane b = a;
    float peak = 0.0f;
    for (float& v : b.storage()) {
      v = std::max(v, 0.0f);
      peak = std::max(peak, v);
    }
    if (peak > 1.0f) {
      for (float& v : b.storage()) v /= peak;
    }
    out.push_back(std::move(b));
  }
  return out;
}

DatasetManifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  DatasetManifest m;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    ManifestEntry e;
    std::size_t start = 0;
    bool first = true;
    while (start <= line.size()) {
      const auto comma = line.find(',', start);
      const std::string field = trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (!field.empty()) {
        if (first) {
          e.hr_path = resolve(field);
        } else {
          e.boundary_paths.push_back(resolve(field));
        }
      }
      first = false;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (e.hr_path.empty()) throw InvalidArgument("manifest line without an image path: " + line);
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<std::filesystem::path> missing_files(const DatasetManifest& manifest) {
  std::vector<std::filesystem::path> missing;
  for (const auto& e : manifest.entries) {
    if (!std::filesystem::exists(e.hr_path)) missing.push_back(e.hr_path);
    for (const auto& b : e.boundary_paths) {
      if (!std::filesystem::exists(b)) missing.push_back(b);
    }
  }
  return missing;
}

ImagePlane load_luminance(const std::filesystem::path& path) {
  return rgb_to_ycbcr(read_png(path)).y;
}

ImagePlane load_boundary(const std::filesystem::path& path) {
  const Image8 img = read_png(path);
  if (img.channels == 1) return gray8_to_plane(img);
  ImagePlane out = ImagePlane::plane(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      out(0, y, x) = static_cast<float>((img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / (3.0 * 255.0));
    }
  }
  return out;
}

TrainingTriplet load_triplet(const ManifestEntry& entry, int scale) {
  TrainingTriplet t;
  t.hr = crop_to_multiple(load_luminance(entry.hr_path), scale);
  t.lr = make_lr(t.hr, scale);
  std::vector<ImagePlane> annotations;
  for (const auto& p : entry.boundary_paths) {
    ImagePlane b = load_boundary(p);
    if (b.height() < t.hr.height() || b.width() < t.hr.width()) {
      throw InvalidArgument("boundary map " + p.string() + " is smaller than its image");
    }
    annotations.push_back(crop(b, 0, 0, t.hr.height(), t.hr.width()));
  }
  t.boundaries = boundary_targets(annotations, t.hr);
  return t;
}

ImagePlane synthetic_image(int height, int width, std::uint64_t seed) {
  if (height <= 0 || width <= 0) throw InvalidArgument("synthetic image size must be positive");
  Rng rng(seed);

  struct Shape {
    int kind;  // 0 rectangle, 1 ellipse, 2 triangle, 3 striped disc
    double cx, cy, a, b, angle;
    double level, slope_x, slope_y;
    double freq, phase;
    double px[3], py[3];
  };

  const double g0 = rng.uniform(0.1, 0.9);
  const double gx = rng.uniform(-0.4, 0.4);
  const double gy = rng.uniform(-0.4, 0.4);
  const int count = 5 + static_cast<int>(rng.below(6));
  std::vector<Shape> shapes(static_cast<std::size_t>(count));
  for (Shape& s : shapes) {
    s.kind = static_cast<int>(rng.below(4));
    s.cx = rng.uniform(0.0, width);
    s.cy = rng.uniform(0.0, height);
    s.a = rng.uniform(0.08, 0.35) * width;
    s.b = rng.uniform(0.08, 0.35) * height;
    s.angle = rng.uniform(0.0, std::numbers::pi);
    s.level = rng.uniform(0.0, 1.0);
    s.slope_x = rng.uniform(-0.5, 0.5) / width;
    s.slope_y = rng.uniform(-0.5, 0.5) / height;
    s.freq = rng.uniform(0.15, 0.6);
    s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < 3; ++k) {
      s.px[k] = s.cx + rng.uniform(-0.4, 0.4) * width;
      s.py[k] = s.cy + rng.uniform(-0.4, 0.4) * height;
    }
  }

  auto inside = [](const Shape& s, double x, double y) {
    const double dx = x - s.cx;
    const double dy = y - s.cy;
    const double c = std::cos(s.angle);
    const double sn = std::sin(s.angle);
    const double u = c * dx + sn * dy;
    const double v = -sn * dx + c * dy;
    switch (s.kind) {
      case 0:
        return std::abs(u) <= s.a * 0.5 && std::abs(v) <= s.b * 0.5;
      case 1:
      case 3:
        return (u * u) / (s.a * s.a * 0.25) + (v * v) / (s.b * s.b * 0.25) <= 1.0;
      default: {
        auto edge = [&](int i, int j) {
          return (s.px[j] - s.px[i]) * (y - s.py[i]) - (s.py[j] - s.py[i]) * (x - s.px[i]);
        };
        const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
        return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
    }
  };
  auto shade = [](const Shape& s, double x, double y) {
    double v = s.level + s.slope_x * (x - s.cx) + s.slope_y * (y - s.cy);
    if (s.kind == 3) {
      const double c = std::cos(s.angle);
      const double sn = std::sin(s.angle);
      v += 0.3 * std::sin(s.freq * (c * x + sn * y) + s.phase);
    }
    return v;
  };

  constexpr int kSuper = 4;
  ImagePlane out = ImagePlane::plane(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper;
          const double py = y + (sy + 0.5) / kSuper;
          double v = g0 + gx * px / width + gy * py / height;
          for (const Shape& s : shapes) {
            if (inside(s, px, py)) v = shade(s, px, py);
          }
          acc += std::clamp(v, 0.0, 1.0);
        }
      }
      const double v = acc / (kSuper * kSuper);
      out(0, y, x) = static_cast<float>((16.0 + 219.0 * v) / 255.0);
    }
  }
  return out;
}

}  // namespace cmsr
