#include "cmsr/ops.hpp"

#include <algorithm>
#include <string>

#include <Eigen/Core>

namespace cmsr {

namespace {

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
void require_rank3(const BasicTensor<T>& t, const char* what) {
  if (t.rank() != 3) {
    throw InvalidArgument(std::string(what) + " must be rank 3 [C,H,W], got " +
                          shape_str(t.shape()));
  }
}

struct ConvGeometry {
  int pad = 0;
  int out_h = 0;
  int out_w = 0;
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicConvSpec<T>& spec) {
  require_rank3(input, "conv2d input");
  spec.validate();
  if (input.channels() != spec.in_channels) {
    throw InvalidArgument("conv2d input has " + std::to_string(input.channels()) +
                          " channels, spec expects " + std::to_string(spec.in_channels));
  }
  const int k = spec.kernel_size;
  ConvGeometry g;
  if (spec.padding == Padding::same) {
    g.pad = k / 2;
    g.out_h = input.height();
    g.out_w = input.width();
  } else {
    if (k > input.height() || k > input.width()) {
      throw InvalidArgument("conv2d valid padding with kernel " + std::to_string(k) +
                            " larger than input " + shape_str(input.shape()));
    }
    g.out_h = input.height() - k + 1;
    g.out_w = input.width() - k + 1;
  }
  return g;
}

// Column matrix [C*k*k, out_h*out_w]; zero where the window leaves the input.
template <typename T>
std::vector<T> im2col(const BasicTensor<T>& input, int k, const ConvGeometry& g) {
  const int channels = input.channels();
  const int h = input.height();
  const int w = input.width();
  const std::size_t pixels = static_cast<std::size_t>(g.out_h) * g.out_w;
  std::vector<T> col(static_cast<std::size_t>(channels) * k * k * pixels, T(0));
  std::size_t row = 0;
  for (int c = 0; c < channels; ++c) {
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx, ++row) {
        T* dst = col.data() + row * pixels;
        const int x_lo = std::max(0, g.pad - dx);
        const int x_hi = std::min(g.out_w, w + g.pad - dx);
        for (int y = 0; y < g.out_h; ++y) {
          const int sy = y + dy - g.pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) continue;
          const T* src = input.row(c, sy) + (dx - g.pad);
          T* d = dst + static_cast<std::size_t>(y) * g.out_w;
          for (int x = x_lo; x < x_hi; ++x) d[x] = src[x];
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_add(const std::vector<T>& col, int k, const ConvGeometry& g, BasicTensor<T>& grad_in) {
  const int channels = grad_in.channels();
  const int h = grad_in.height();
  const int w = grad_in.width();
  const std::size_t pixels = static_cast<std::size_t>(g.out_h) * g.out_w;
  std::size_t row = 0;
  for (int c = 0; c < channels; ++c) {
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx, ++row) {
        const T* src = col.data() + row * pixels;
        const int x_lo = std::max(0, g.pad - dx);
        const int x_hi = std::min(g.out_w, w + g.pad - dx);
        for (int y = 0; y < g.out_h; ++y) {
          const int sy = y + dy - g.pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) continue;
          T* dst = grad_in.row(c, sy) + (dx - g.pad);
          const T* s = src + static_cast<std::size_t>(y) * g.out_w;
          for (int x = x_lo; x < x_hi; ++x) dst[x] += s[x];
        }
      }
    }
  }
}

// Inclusive range of LR indices (possibly outside [0, n)) whose kernel
// footprint reaches at least one output position.
struct DeconvRange {
  int lo;
  int hi;
};

DeconvRange deconv_range(int lr_size, int n, int s, int crop) {
  // Output y = s*i + t - crop with t in [0, n) and y in [0, s*lr_size).
  const int out = s * lr_size;
  auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  const int lo = -floor_div(n - 1 - crop, s);
  const int hi = floor_div(out - 1 + crop, s);
  return {lo, hi};
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMat<T>> cmat(const T* data, int rows, int cols) {
  return Eigen::Map<const RowMat<T>>(data, rows, cols);
}

// C[m x n] (row-major) = A * B. Eigen's matrix-vector and reduction kernels
// peel to the first aligned address, so their rounding depends on where the
// buffers live; vector shapes use fixed-order loops instead.
template <typename A, typename B, typename T>
void gemm(int m, int n, const A& a, const B& b, T* c) {
  if (m == 1 || n == 1) {
    const Eigen::Index inner = a.cols();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        T acc = 0;
        for (Eigen::Index k = 0; k < inner; ++k) acc += a.coeff(i, k) * b.coeff(k, j);
        c[static_cast<std::size_t>(i) * n + j] = acc;
      }
    }
    return;
  }
  Eigen::Map<RowMat<T>> out(c, m, n);
  out.noalias() = a * b;
}

template <typename T>
T plain_sum(const T* p, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += p[i];
  return acc;
}

}  // namespace

template <typename T>
BasicConvSpec<T>::BasicConvSpec(int in, int out, int k, Padding pad, bool with_bias)
    : in_channels(in),
      out_channels(out),
      kernel_size(k),
      padding(pad),
      kernels({out, in, k, k}),
      bias(with_bias ? static_cast<std::size_t>(out) : 0, T(0)) {
  validate();
}

template <typename T>
void BasicConvSpec<T>::validate() const {
  if (in_channels <= 0 || out_channels <= 0) throw InvalidArgument("conv channels must be positive");
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw InvalidArgument("conv kernel size must be positive and odd, got " +
                          std::to_string(kernel_size));
  }
  const std::vector<int> expect{out_channels, in_channels, kernel_size, kernel_size};
  if (kernels.shape() != expect) {
    throw InvalidArgument("conv kernels shape " + shape_str(kernels.shape()) + " != " +
                          shape_str(expect));
  }
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels)) {
    throw InvalidArgument("conv bias length does not match out_channels");
  }
}

template <typename T>
template <typename U>
BasicConvSpec<U> BasicConvSpec<T>::cast() const {
  BasicConvSpec<U> out;
  out.in_channels = in_channels;
  out.out_channels = out_channels;
  out.kernel_size = kernel_size;
  out.padding = padding;
  out.kernels = kernels.template cast<U>();
  out.bias.assign(bias.begin(), bias.end());
  return out;
}

template <typename T>
BasicDeconvSpec<T>::BasicDeconvSpec(int in, int out, int n, int s, Border b)
    : in_channels(in),
      out_channels(out),
      kernel_size(n),
      stride(s),
      border(b),
      kernels({in, out, n, n}),
      bias(static_cast<std::size_t>(out), T(0)) {
  validate();
}

template <typename T>
void BasicDeconvSpec<T>::validate() const {
  if (in_channels <= 0 || out_channels <= 0) {
    throw InvalidArgument("deconv channels must be positive");
  }
  if (kernel_size <= 0 || stride <= 0) {
    throw InvalidArgument("deconv kernel size and stride must be positive");
  }
  if (kernel_size < stride) {
    throw InvalidArgument("deconv kernel must be at least as wide as the stride");
  }
  const std::vector<int> expect{in_channels, out_channels, kernel_size, kernel_size};
  if (kernels.shape() != expect) {
    throw InvalidArgument("deconv kernels shape " + shape_str(kernels.shape()) + " != " +
                          shape_str(expect));
  }
  if (bias.size() != static_cast<std::size_t>(out_channels)) {
    throw InvalidArgument("deconv bias length does not match out_channels");
  }
}

template <typename T>
template <typename U>
BasicDeconvSpec<U> BasicDeconvSpec<T>::cast() const {
  BasicDeconvSpec<U> out;
  out.in_channels = in_channels;
  out.out_channels = out_channels;
  out.kernel_size = kernel_size;
  out.stride = stride;
  out.border = border;
  out.kernels = kernels.template cast<U>();
  out.bias.assign(bias.begin(), bias.end());
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicConvSpec<T>& spec) {
  const ConvGeometry g = conv_geometry(input, spec);
  const int k = spec.kernel_size;
  const int pixels = g.out_h * g.out_w;
  const int taps = spec.in_channels * k * k;

  BasicTensor<T> out({spec.out_channels, g.out_h, g.out_w});
  // A 1x1 same-padded window is the input itself.
  std::vector<T> col_storage;
  const T* col = input.data();
  if (!(k == 1 && g.pad == 0 && g.out_h == input.height())) {
    col_storage = im2col(input, k, g);
    col = col_storage.data();
  }
  gemm(spec.out_channels, pixels, cmat(spec.kernels.data(), spec.out_channels, taps),
       cmat(col, taps, pixels), out.data());
  if (spec.has_bias()) {
    for (int o = 0; o < spec.out_channels; ++o) {
      T* dst = out.data() + static_cast<std::size_t>(o) * pixels;
      const T b = spec.bias[static_cast<std::size_t>(o)];
      for (int p = 0; p < pixels; ++p) dst[p] += b;
    }
  }
  return out;
}

template <typename T>
LayerGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicConvSpec<T>& spec,
                              const BasicTensor<T>& grad_out, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, spec);
  const std::vector<int> expect{spec.out_channels, g.out_h, g.out_w};
  if (grad_out.shape() != expect) {
    throw InvalidArgument("conv2d_backward grad_out shape " + shape_str(grad_out.shape()) +
                          " != output shape " + shape_str(expect));
  }
  const int k = spec.kernel_size;
  const int pixels = g.out_h * g.out_w;
  const int taps = spec.in_channels * k * k;
  const bool direct = k == 1 && g.pad == 0 && g.out_h == input.height();

  std::vector<T> col_storage;
  const T* col = input.data();
  if (!direct) {
    col_storage = im2col(input, k, g);
    col = col_storage.data();
  }

  LayerGrads<T> grads;
  grads.kernels = BasicTensor<T>(spec.kernels.shape());
  const auto go = cmat(grad_out.data(), spec.out_channels, pixels);
  gemm(spec.out_channels, taps, go, cmat(col, taps, pixels).transpose(), grads.kernels.data());
  if (spec.has_bias()) {
    grads.bias.assign(static_cast<std::size_t>(spec.out_channels), T(0));
    for (int o = 0; o < spec.out_channels; ++o) grads.bias[static_cast<std::size_t>(o)] =
          plain_sum(grad_out.data() + static_cast<std::size_t>(o) * pixels, static_cast<std::size_t>(pixels));
  }

  if (need_input_grad && spec.padding == Padding::same && spec.out_channels < spec.in_channels) {
    // Same-padded: the input gradient is grad_out correlated with the
    // flipped, transposed kernels; cheaper when the layer narrows.
    BasicConvSpec<T> flipped(spec.out_channels, spec.in_channels, k, Padding::same, false);
    for (int o = 0; o < spec.out_channels; ++o) {
      for (int c = 0; c < spec.in_channels; ++c) {
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            flipped.kernels(c, o, k - 1 - dy, k - 1 - dx) = spec.kernels(o, c, dy, dx);
          }
        }
      }
    }
    grads.input = conv2d(grad_out, flipped);
  } else if (need_input_grad) {
    std::vector<T> grad_col(static_cast<std::size_t>(taps) * pixels);
    gemm(taps, pixels, cmat(spec.kernels.data(), spec.out_channels, taps).transpose(), go,
         grad_col.data());
    if (direct) {
      grads.input = BasicTensor<T>(input.shape(), std::move(grad_col));
    } else {
      grads.input = BasicTensor<T>(input.shape());
      col2im_add(grad_col, k, g, grads.input);
    }
  }
  return grads;
}

namespace {

// LR grid extended over the deconv footprint range, borders replicated or zero.
template <typename T>
std::vector<T> extend_lr(const BasicTensor<T>& input, const DeconvRange& ry, const DeconvRange& rx,
                         bool replicate) {
  const int h = input.height();
  const int w = input.width();
  const int eh = ry.hi - ry.lo + 1;
  const int ew = rx.hi - rx.lo + 1;
  std::vector<T> ext(static_cast<std::size_t>(input.channels()) * eh * ew, T(0));
  for (int c = 0; c < input.channels(); ++c) {
    for (int i = 0; i < eh; ++i) {
      const int li = ry.lo + i;
      if (!replicate && (li < 0 || li >= h)) continue;
      const T* src = input.row(c, std::clamp(li, 0, h - 1));
      T* dst = ext.data() + (static_cast<std::size_t>(c) * eh + i) * ew;
      for (int j = 0; j < ew; ++j) {
        const int lj = rx.lo + j;
        if (!replicate && (lj < 0 || lj >= w)) continue;
        dst[j] = src[std::clamp(lj, 0, w - 1)];
      }
    }
  }
  return ext;
}

struct DeconvPlan {
  int h, w, s, n, cr, out_h, out_w;
  DeconvRange ry, rx;
  int eh, ew;
};

template <typename T>
DeconvPlan deconv_plan(const BasicTensor<T>& input, const BasicDeconvSpec<T>& spec) {
  DeconvPlan p;
  p.h = input.height();
  p.w = input.width();
  p.s = spec.stride;
  p.n = spec.kernel_size;
  p.cr = spec.crop();
  p.out_h = p.s * p.h;
  p.out_w = p.s * p.w;
  p.ry = deconv_range(p.h, p.n, p.s, p.cr);
  p.rx = deconv_range(p.w, p.n, p.s, p.cr);
  p.eh = p.ry.hi - p.ry.lo + 1;
  p.ew = p.rx.hi - p.rx.lo + 1;
  return p;
}

// Valid extended-grid index range [lo, hi) for kernel tap t along one axis.
std::pair<int, int> tap_span(int t, int lo, int extent, int s, int cr, int out) {
  auto ceil_div = [](int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); };
  auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  const int first = std::max(0, ceil_div(cr - t, s) - lo);
  const int last = std::min(extent, floor_div(out - 1 + cr - t, s) - lo + 1);
  return {first, std::max(first, last)};
}

// Calls f(col_row, site, out_offset, count) for every run of extended-grid
// sites in one row that a kernel tap maps into the output; consecutive sites
// land `stride` output pixels apart.
template <typename F>
void deconv_sites(const DeconvPlan& p, int out_channels, F&& f) {
  for (int o = 0; o < out_channels; ++o) {
    for (int ty = 0; ty < p.n; ++ty) {
      const auto [i_lo, i_hi] = tap_span(ty, p.ry.lo, p.eh, p.s, p.cr, p.out_h);
      for (int tx = 0; tx < p.n; ++tx) {
        const auto [j_lo, j_hi] = tap_span(tx, p.rx.lo, p.ew, p.s, p.cr, p.out_w);
        if (j_lo >= j_hi) continue;
        const std::size_t row = (static_cast<std::size_t>(o) * p.n + ty) * p.n + tx;
        const int x = p.s * (p.rx.lo + j_lo) + tx - p.cr;
        for (int i = i_lo; i < i_hi; ++i) {
          const int y = p.s * (p.ry.lo + i) + ty - p.cr;
          f(row, static_cast<std::size_t>(i) * p.ew + j_lo,
            (static_cast<std::size_t>(o) * p.out_h + y) * p.out_w + x, j_hi - j_lo);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const BasicDeconvSpec<T>& spec) {
  require_rank3(input, "deconv2d input");
  spec.validate();
  if (input.channels() != spec.in_channels) {
    throw InvalidArgument("deconv2d input has " + std::to_string(input.channels()) +
                          " channels, spec expects " + std::to_string(spec.in_channels));
  }
  const DeconvPlan p = deconv_plan(input, spec);
  const int taps = spec.out_channels * p.n * p.n;
  const int sites = p.eh * p.ew;
  const auto ext = extend_lr(input, p.ry, p.rx, spec.border == Border::replicate);

  // cols[(o, ty, tx), site] = sum_c K[c, o, ty, tx] * x_ext[c, site]
  std::vector<T> cols(static_cast<std::size_t>(taps) * sites);
  gemm(taps, sites, cmat(spec.kernels.data(), spec.in_channels, taps).transpose(),
       cmat(ext.data(), spec.in_channels, sites), cols.data());

  BasicTensor<T> out({spec.out_channels, p.out_h, p.out_w});
  for (int o = 0; o < spec.out_channels; ++o) {
    T* dst = out.row(o, 0);
    std::fill(dst, dst + static_cast<std::size_t>(p.out_h) * p.out_w, spec.bias[static_cast<std::size_t>(o)]);
  }
  T* dst = out.data();
  const int st = p.s;
  deconv_sites(p, spec.out_channels, [&](std::size_t row, std::size_t site, std::size_t at, int count) {
    const T* src = cols.data() + row * sites + site;
    T* d = dst + at;
    for (int j = 0; j < count; ++j) d[static_cast<std::size_t>(j) * st] += src[j];
  });
  return out;
}

template <typename T>
LayerGrads<T> deconv2d_backward(const BasicTensor<T>& input, const BasicDeconvSpec<T>& spec,
                                const BasicTensor<T>& grad_out, bool need_input_grad) {
  require_rank3(input, "deconv2d_backward input");
  spec.validate();
  if (input.channels() != spec.in_channels) {
    throw InvalidArgument("deconv2d_backward input channel mismatch");
  }
  const DeconvPlan p = deconv_plan(input, spec);
  const std::vector<int> expect{spec.out_channels, p.out_h, p.out_w};
  if (grad_out.shape() != expect) {
    throw InvalidArgument("deconv2d_backward grad_out shape " + shape_str(grad_out.shape()) +
                          " != output shape " + shape_str(expect));
  }
  const int taps = spec.out_channels * p.n * p.n;
  const int sites = p.eh * p.ew;
  const bool replicate = spec.border == Border::replicate;
  const auto ext = extend_lr(input, p.ry, p.rx, replicate);

  LayerGrads<T> grads;
  grads.bias.assign(static_cast<std::size_t>(spec.out_channels), T(0));
  for (int o = 0; o < spec.out_channels; ++o) {
    grads.bias[static_cast<std::size_t>(o)] =
        plain_sum(grad_out.row(o, 0), static_cast<std::size_t>(p.out_h) * p.out_w);
  }

  std::vector<T> dcols(static_cast<std::size_t>(taps) * sites, T(0));
  const T* go = grad_out.data();
  const int st = p.s;
  deconv_sites(p, spec.out_channels, [&](std::size_t row, std::size_t site, std::size_t at, int count) {
    T* d = dcols.data() + row * sites + site;
    const T* src = go + at;
    for (int j = 0; j < count; ++j) d[j] = src[static_cast<std::size_t>(j) * st];
  });
  const auto d = cmat(dcols.data(), taps, sites);

  grads.kernels = BasicTensor<T>(spec.kernels.shape());
  gemm(spec.in_channels, taps, cmat(ext.data(), spec.in_channels, sites), d.transpose(),
       grads.kernels.data());

  if (need_input_grad) {
    std::vector<T> gext(static_cast<std::size_t>(spec.in_channels) * sites);
    gemm(spec.in_channels, sites, cmat(spec.kernels.data(), spec.in_channels, taps), d, gext.data());
    grads.input = BasicTensor<T>(input.shape());
    for (int c = 0; c < spec.in_channels; ++c) {
      for (int i = 0; i < p.eh; ++i) {
        const int li = p.ry.lo + i;
        if (!replicate && (li < 0 || li >= p.h)) continue;
        T* dst = grads.input.row(c, std::clamp(li, 0, p.h - 1));
        const T* src = gext.data() + (static_cast<std::size_t>(c) * p.eh + i) * p.ew;
        for (int j = 0; j < p.ew; ++j) {
          const int lj = p.rx.lo + j;
          if (!replicate && (lj < 0 || lj >= p.w)) continue;
          dst[std::clamp(lj, 0, p.w - 1)] += src[j];
        }
      }
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  relu_inplace(out);
  return out;
}

template <typename T>
void relu_inplace(BasicTensor<T>& t) {
  for (T& v : t.storage()) v = v > T(0) ? v : T(0);
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  if (!input.same_shape(grad_out)) {
    throw InvalidArgument("relu_backward shape mismatch");
  }
  BasicTensor<T> grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > T(0))) grad[i] = T(0);
  }
  return grad;
}

#define CMSR_INSTANTIATE_OPS(T)                                                                \
  template struct BasicConvSpec<T>;                                                            \
  template struct BasicDeconvSpec<T>;                                                          \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicConvSpec<T>&);              \
  template LayerGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicConvSpec<T>&,       \
                                         const BasicTensor<T>&, bool);                         \
  template BasicTensor<T> deconv2d(const BasicTensor<T>&, const BasicDeconvSpec<T>&);          \
  template LayerGrads<T> deconv2d_backward(const BasicTensor<T>&, const BasicDeconvSpec<T>&,   \
                                           const BasicTensor<T>&, bool);                       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template void relu_inplace(BasicTensor<T>&);                                                 \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);

CMSR_INSTANTIATE_OPS(float)
CMSR_INSTANTIATE_OPS(double)

template BasicConvSpec<double> BasicConvSpec<float>::cast<double>() const;
template BasicConvSpec<float> BasicConvSpec<double>::cast<float>() const;
template BasicDeconvSpec<double> BasicDeconvSpec<float>::cast<double>() const;
template BasicDeconvSpec<float> BasicDeconvSpec<double>::cast<float>() const;

}  // namespace cmsr
