#include "cmsr/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmsr/imaging.hpp"
#include "cmsr/random.hpp"

namespace cmsr {

namespace {

struct LayerShape {
  int kernel;
  int channels;
};

std::vector<LayerShape> extraction_layers(Profile profile) {
  if (profile == Profile::deep) {
    std::vector<LayerShape> layers{{5, 16}, {3, 32}, {3, 64}};
    for (int i = 0; i < 13; ++i) layers.push_back({3, 64});
    layers.push_back({3, 128});
    layers.push_back({1, 8});
    return layers;
  }
  return {{5, 16}, {3, 32}, {3, 128}, {1, 8}};
}

template <typename T>
void check_finite(const BasicTensor<T>& t, int layer, const char* name) {
  if (!t.all_finite()) {
    throw NumericFailure("non-finite activation at layer " + std::to_string(layer) + " (" + name +
                             ")",
                         name);
  }
}

template <typename T>
void add_into(BasicTensor<T>& acc, const BasicTensor<T>& g) {
  if (g.empty()) return;
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

template <typename T>
void add_into(std::vector<T>& acc, const std::vector<T>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

template <typename T>
void accumulate_conv(BasicConvSpec<T>& dst, const LayerGrads<T>& g) {
  add_into(dst.kernels, g.kernels);
  add_into(dst.bias, g.bias);
}

template <typename T>
void accumulate_deconv(BasicDeconvSpec<T>& dst, const LayerGrads<T>& g) {
  add_into(dst.kernels, g.kernels);
  add_into(dst.bias, g.bias);
}

template <typename T>
BasicTensor<T> channel(const BasicTensor<T>& t, int c) {
  BasicTensor<T> out({1, t.height(), t.width()});
  std::copy_n(t.row(c, 0), out.size(), out.data());
  return out;
}

void fill_he(std::span<float> row, int fan_in, double gain, Rng& rng) {
  const double stddev = gain * std::sqrt(2.0 / fan_in);
  for (float& v : row) v = static_cast<float>(stddev * rng.normal());
}

void set_center_delta(ConvSpec& spec, int out, int in) {
  const int k = spec.kernel_size;
  spec.kernels(out, in, k / 2, k / 2) = 1.0f;
}

std::span<float> kernel_row(ConvSpec& spec, int out) {
  const std::size_t taps =
      static_cast<std::size_t>(spec.in_channels) * spec.kernel_size * spec.kernel_size;
  return {spec.kernels.data() + static_cast<std::size_t>(out) * taps, taps};
}

}  // namespace

const char* to_string(ParamGroup g) noexcept {
  switch (g) {
    case ParamGroup::shared:
      return "shared";
    case ParamGroup::image:
      return "image";
    case ParamGroup::boundary:
      return "boundary";
    case ParamGroup::residual:
      return "residual";
    case ParamGroup::fusion:
      return "fusion";
  }
  return "?";
}

bool GroupMask::contains(ParamGroup g) const noexcept {
  switch (g) {
    case ParamGroup::shared:
      return shared;
    case ParamGroup::image:
      return image;
    case ParamGroup::boundary:
      return boundary;
    case ParamGroup::residual:
      return residual;
    case ParamGroup::fusion:
      return fusion;
  }
  return false;
}

GroupMask GroupMask::only(std::initializer_list<ParamGroup> groups) {
  GroupMask m{false, false, false, false, false};
  for (ParamGroup g : groups) {
    switch (g) {
      case ParamGroup::shared:
        m.shared = true;
        break;
      case ParamGroup::image:
        m.image = true;
        break;
      case ParamGroup::boundary:
        m.boundary = true;
        break;
      case ParamGroup::residual:
        m.residual = true;
        break;
      case ParamGroup::fusion:
        m.fusion = true;
        break;
    }
  }
  return m;
}

template <typename T>
template <typename U>
BasicNetworkParams<U> BasicNetworkParams<T>::cast() const {
  BasicNetworkParams<U> out;
  out.scale = scale;
  out.profile = profile;
  for (const auto& l : extraction) out.extraction.push_back(l.template cast<U>());
  out.interp_boundary = interp_boundary.template cast<U>();
  out.interp_residual = interp_residual.template cast<U>();
  out.bcn_hidden = bcn_hidden.template cast<U>();
  out.bcn_out = bcn_out.template cast<U>();
  out.rcn_hidden = rcn_hidden.template cast<U>();
  out.rcn_out = rcn_out.template cast<U>();
  out.fusion = fusion.template cast<U>();
  return out;
}

template <typename T>
BasicNetworkParams<T> BasicNetworkParams<T>::zeros_like() const {
  BasicNetworkParams<T> out = *this;
  for (auto& slice : param_slices(out)) std::fill(slice.values.begin(), slice.values.end(), T(0));
  return out;
}

namespace {

template <typename P, typename T>
std::vector<ParamSlice<T>> slices_impl(P& params) {
  std::vector<ParamSlice<T>> out;
  auto add = [&out](std::string name, ParamGroup g, bool last, std::span<T> v) {
    if (!v.empty()) out.push_back({std::move(name), g, last, v});
  };
  auto conv = [&](const std::string& name, ParamGroup g, bool last, auto& spec) {
    add(name + ".w", g, last, std::span<T>(spec.kernels.storage()));
    add(name + ".b", g, last, std::span<T>(spec.bias));
  };
  for (std::size_t i = 0; i < params.extraction.size(); ++i) {
    conv("extract." + std::to_string(i), ParamGroup::shared, false, params.extraction[i]);
  }
  conv("interp1", ParamGroup::shared, false, params.interp_boundary);
  conv("interp2", ParamGroup::shared, false, params.interp_residual);
  conv("bcn.hidden", ParamGroup::image, false, params.bcn_hidden);

  auto& head = params.bcn_out;
  const std::size_t taps =
      static_cast<std::size_t>(head.in_channels) * head.kernel_size * head.kernel_size;
  std::span<T> w(head.kernels.storage());
  std::span<T> b(head.bias);
  add("bcn.out.w.image", ParamGroup::image, true, w.subspan(0, taps));
  add("bcn.out.b.image", ParamGroup::image, true, b.subspan(0, 1));
  add("bcn.out.w.boundary", ParamGroup::boundary, true, w.subspan(taps, taps));
  add("bcn.out.b.boundary", ParamGroup::boundary, true, b.subspan(1, 1));

  conv("rcn.hidden", ParamGroup::residual, false, params.rcn_hidden);
  conv("rcn.out", ParamGroup::residual, true, params.rcn_out);
  conv("fusion", ParamGroup::fusion, true, params.fusion);
  return out;
}

}  // namespace

template <typename T>
std::vector<ParamSlice<T>> param_slices(BasicNetworkParams<T>& params) {
  return slices_impl<BasicNetworkParams<T>, T>(params);
}

template <typename T>
std::vector<ParamSlice<const T>> param_slices(const BasicNetworkParams<T>& params) {
  return slices_impl<const BasicNetworkParams<T>, const T>(params);
}

int deconv_kernel_size(int scale) {
  switch (scale) {
    case 2:
      return 8;
    case 3:
      return 11;
    case 4:
      return 16;
    default:
      throw InvalidArgument("unsupported scale " + std::to_string(scale) + " (expected 2, 3 or 4)");
  }
}

NetworkParams build_network(const NetworkConfig& config) {
  const int n = deconv_kernel_size(config.scale);
  const int s = config.scale;
  if (n < 2 * s) throw InvalidArgument("deconv kernel does not cover the second LR neighbor");
  if (config.max_channels != 0 && config.max_channels < 2) {
    throw InvalidArgument("channel cap must be at least 2");
  }
  auto width = [&](int c) { return config.max_channels > 0 ? std::min(c, config.max_channels) : c; };

  NetworkParams p;
  p.scale = s;
  p.profile = config.profile;
  int in = 1;
  for (const LayerShape& l : extraction_layers(config.profile)) {
    p.extraction.emplace_back(in, width(l.channels), l.kernel);
    in = width(l.channels);
  }
  const int features = in;
  const int interp = width(8);
  p.interp_boundary = DeconvSpec(features, interp, n, s);
  p.interp_residual = DeconvSpec(features, interp, n, s);
  p.bcn_hidden = ConvSpec(interp, width(12), 3);
  p.bcn_out = ConvSpec(width(12), 2, 3);
  p.rcn_hidden = ConvSpec(interp, width(12), 3);
  p.rcn_out = ConvSpec(width(12), 1, 3);
  p.fusion = ConvSpec(1, 1, 3, Padding::same, /*with_bias=*/false);
  set_center_delta(p.fusion, 0, 0);
  return p;
}

std::size_t parameter_count(const NetworkParams& params, bool include_fusion, bool include_bias) {
  std::size_t total = 0;
  auto add_conv = [&](const ConvSpec& c) {
    total += c.kernels.size();
    if (include_bias) total += c.bias.size();
  };
  auto add_deconv = [&](const DeconvSpec& d) {
    total += d.kernels.size();
    if (include_bias) total += d.bias.size();
  };
  for (const auto& l : params.extraction) add_conv(l);
  add_deconv(params.interp_boundary);
  add_deconv(params.interp_residual);
  add_conv(params.bcn_hidden);
  add_conv(params.bcn_out);
  add_conv(params.rcn_hidden);
  add_conv(params.rcn_out);
  if (include_fusion) add_conv(params.fusion);
  return total;
}

void init_gaussian(NetworkParams& params, double stddev, std::uint64_t seed) {
  if (!(stddev > 0.0)) throw InvalidArgument("init_gaussian: stddev must be positive");
  Rng rng(seed);
  for (auto& slice : param_slices(params)) {
    if (slice.group == ParamGroup::fusion) continue;
    const bool is_bias = slice.name.ends_with(".b") || slice.name.find(".b.") != std::string::npos;
    for (float& v : slice.values) v = is_bias ? 0.0f : static_cast<float>(stddev * rng.normal());
  }
  params.fusion.kernels.fill(0.0f);
  params.fusion.kernels(0, 0, 1, 1) = 1.0f;
}

Tensor init_deconv_bicubic(int scale, int channels) {
  const int n = deconv_kernel_size(scale);
  const int anchor = (n - 1) / 2;
  Tensor k({channels, channels, n, n});
  for (int ty = 0; ty < n; ++ty) {
    const double wy = bicubic_weight(static_cast<double>(ty - anchor) / scale);
    for (int tx = 0; tx < n; ++tx) {
      const double wx = bicubic_weight(static_cast<double>(tx - anchor) / scale);
      const auto v = static_cast<float>(wy * wx);
      for (int c = 0; c < channels; ++c) k(c, c, ty, tx) = v;
    }
  }
  return k;
}

void init_passthrough(NetworkParams& params, double hidden_gain, std::uint64_t seed) {
  Rng rng(seed);
  auto he_rows = [&](ConvSpec& spec, int first_row) {
    const int fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size;
    for (int o = 0; o < spec.out_channels; ++o) {
      auto row = kernel_row(spec, o);
      if (o < first_row) {
        std::fill(row.begin(), row.end(), 0.0f);
      } else {
        fill_he(row, fan_in, hidden_gain, rng);
      }
    }
    std::fill(spec.bias.begin(), spec.bias.end(), 0.0f);
  };

  for (auto& layer : params.extraction) {
    he_rows(layer, 1);
    set_center_delta(layer, 0, 0);
  }
  for (DeconvSpec* d : {&params.interp_boundary, &params.interp_residual}) {
    if (d->in_channels != d->out_channels) {
      throw InvalidArgument("bicubic interpolator init needs equal in/out channels");
    }
    d->kernels = init_deconv_bicubic(params.scale, d->in_channels);
    std::fill(d->bias.begin(), d->bias.end(), 0.0f);
  }
  he_rows(params.bcn_hidden, 1);
  set_center_delta(params.bcn_hidden, 0, 0);
  params.bcn_out.kernels.fill(0.0f);
  std::fill(params.bcn_out.bias.begin(), params.bcn_out.bias.end(), 0.0f);
  set_center_delta(params.bcn_out, 0, 0);

  he_rows(params.rcn_hidden, 0);
  params.rcn_out.kernels.fill(0.0f);
  std::fill(params.rcn_out.bias.begin(), params.rcn_out.bias.end(), 0.0f);

  params.fusion.kernels.fill(0.0f);
  set_center_delta(params.fusion, 0, 0);
}

template <typename T>
ForwardTrace<T> forward_trace(const BasicNetworkParams<T>& params, const BasicTensor<T>& input,
                              const ForwardOptions& options) {
  if (input.rank() != 3 || input.channels() != 1) {
    throw InvalidArgument("forward expects a [1, H, W] luminance plane");
  }
  if (input.height() < kMinInputSide || input.width() < kMinInputSide) {
    throw InvalidArgument("forward input must be at least " + std::to_string(kMinInputSide) +
                          " pixels on each side");
  }
  ForwardTrace<T> tr;
  tr.input = input;
  int layer = 0;
  const BasicTensor<T>* x = &tr.input;
  for (const auto& spec : params.extraction) {
    BasicTensor<T> h = conv2d(*x, spec);
    relu_inplace(h);
    check_finite(h, layer++, "extraction");
    tr.extraction.push_back(std::move(h));
    x = &tr.extraction.back();
  }
  const BasicTensor<T>& features = *x;

  tr.interp_boundary = deconv2d(features, params.interp_boundary);
  relu_inplace(tr.interp_boundary);
  check_finite(tr.interp_boundary, layer++, "interpolation-1");
  tr.bcn_hidden = conv2d(tr.interp_boundary, params.bcn_hidden);
  relu_inplace(tr.bcn_hidden);
  check_finite(tr.bcn_hidden, layer++, "bcn hidden");
  BasicTensor<T> head = conv2d(tr.bcn_hidden, params.bcn_out);
  check_finite(head, layer++, "bcn output");
  tr.outputs.inter_hr = channel(head, 0);
  tr.outputs.boundary = channel(head, 1);

  const bool run_rcn = options.use_residual && options.need_residual;
  if (run_rcn) {
    tr.interp_residual = deconv2d(features, params.interp_residual);
    relu_inplace(tr.interp_residual);
    check_finite(tr.interp_residual, layer, "interpolation-2");
    tr.rcn_hidden = conv2d(tr.interp_residual, params.rcn_hidden);
    relu_inplace(tr.rcn_hidden);
    check_finite(tr.rcn_hidden, layer + 1, "rcn hidden");
    tr.outputs.residual = conv2d(tr.rcn_hidden, params.rcn_out);
    check_finite(tr.outputs.residual, layer + 2, "rcn output");
  } else {
    tr.outputs.residual = BasicTensor<T>(tr.outputs.inter_hr.shape());
  }
  layer += 3;

  tr.outputs.y = conv2d(tr.outputs.inter_hr, params.fusion);
  for (std::size_t i = 0; i < tr.outputs.y.size(); ++i) tr.outputs.y[i] += tr.outputs.residual[i];
  check_finite(tr.outputs.y, layer, "fusion");
  return tr;
}

template <typename T>
BasicForwardOutputs<T> forward(const BasicNetworkParams<T>& params, const BasicTensor<T>& input,
                               const ForwardOptions& options) {
  return std::move(forward_trace(params, input, options).outputs);
}

template <typename T>
void backward(const BasicNetworkParams<T>& params, const ForwardTrace<T>& trace,
              const OutputGrads<T>& upstream, const GroupMask& mask, BasicNetworkParams<T>& grads) {
  BasicTensor<T> g_inter = upstream.inter_hr;
  BasicTensor<T> g_residual = upstream.residual;

  if (!upstream.y.empty()) {
    auto fg = conv2d_backward(trace.outputs.inter_hr, params.fusion, upstream.y);
    if (mask.fusion) accumulate_conv(grads.fusion, fg);
    add_into(g_inter, fg.input);
    if (!trace.rcn_hidden.empty()) add_into(g_residual, upstream.y);
  }

  BasicTensor<T> g_features;
  const bool need_features = mask.shared;

  // RCN branch.
  if (!g_residual.empty() && !trace.rcn_hidden.empty() && (mask.residual || mask.shared)) {
    auto out_g = conv2d_backward(trace.rcn_hidden, params.rcn_out, g_residual);
    if (mask.residual) accumulate_conv(grads.rcn_out, out_g);
    auto hid_g = conv2d_backward(trace.interp_residual, params.rcn_hidden,
                                 relu_backward(trace.rcn_hidden, out_g.input), mask.shared);
    if (mask.residual) accumulate_conv(grads.rcn_hidden, hid_g);
    if (mask.shared) {
      auto ig = deconv2d_backward(trace.extraction.back(), params.interp_residual,
                                  relu_backward(trace.interp_residual, hid_g.input), need_features);
      accumulate_deconv(grads.interp_residual, ig);
      add_into(g_features, ig.input);
    }
  }

  // BCN branch.
  if ((!g_inter.empty() || !upstream.boundary.empty()) &&
      (mask.image || mask.boundary || mask.shared)) {
    const int h = trace.outputs.inter_hr.height();
    const int w = trace.outputs.inter_hr.width();
    BasicTensor<T> g_head({2, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (!g_inter.empty()) std::copy_n(g_inter.data(), plane, g_head.data());
    if (!upstream.boundary.empty()) std::copy_n(upstream.boundary.data(), plane, g_head.data() + plane);

    const bool deeper = mask.image || mask.shared;
    auto out_g = conv2d_backward(trace.bcn_hidden, params.bcn_out, g_head, deeper);
    const std::size_t taps = out_g.kernels.size() / 2;
    for (std::size_t t = 0; t < taps; ++t) {
      if (mask.image) grads.bcn_out.kernels[t] += out_g.kernels[t];
      if (mask.boundary) grads.bcn_out.kernels[taps + t] += out_g.kernels[taps + t];
    }
    if (mask.image) grads.bcn_out.bias[0] += out_g.bias[0];
    if (mask.boundary) grads.bcn_out.bias[1] += out_g.bias[1];

    if (deeper) {
      auto hid_g = conv2d_backward(trace.interp_boundary, params.bcn_hidden,
                                   relu_backward(trace.bcn_hidden, out_g.input), mask.shared);
      if (mask.image) accumulate_conv(grads.bcn_hidden, hid_g);
      if (mask.shared) {
        auto ig = deconv2d_backward(trace.extraction.back(), params.interp_boundary,
                                    relu_backward(trace.interp_boundary, hid_g.input), true);
        accumulate_deconv(grads.interp_boundary, ig);
        add_into(g_features, ig.input);
      }
    }
  }

  if (!mask.shared || g_features.empty()) return;
  BasicTensor<T> g = std::move(g_features);
  for (std::size_t l = params.extraction.size(); l-- > 0;) {
    const BasicTensor<T>& in = l == 0 ? trace.input : trace.extraction[l - 1];
    auto lg = conv2d_backward(in, params.extraction[l], relu_backward(trace.extraction[l], g), l > 0);
    accumulate_conv(grads.extraction[l], lg);
    if (l > 0) g = std::move(lg.input);
  }
}

#define CMSR_INSTANTIATE_NETWORK(T)                                                               \
  template struct BasicNetworkParams<T>;                                                          \
  template std::vector<ParamSlice<T>> param_slices(BasicNetworkParams<T>&);                      \
  template std::vector<ParamSlice<const T>> param_slices(const BasicNetworkParams<T>&);          \
  template ForwardTrace<T> forward_trace(const BasicNetworkParams<T>&, const BasicTensor<T>&,     \
                                         const ForwardOptions&);                                  \
  template BasicForwardOutputs<T> forward(const BasicNetworkParams<T>&, const BasicTensor<T>&,    \
                                          const ForwardOptions&);                                 \
  template void backward(const BasicNetworkParams<T>&, const ForwardTrace<T>&,                    \
                         const OutputGrads<T>&, const GroupMask&, BasicNetworkParams<T>&);

CMSR_INSTANTIATE_NETWORK(float)
CMSR_INSTANTIATE_NETWORK(double)

template BasicNetworkParams<double> BasicNetworkParams<float>::cast<double>() const;
template BasicNetworkParams<float> BasicNetworkParams<double>::cast<float>() const;

}  // namespace cmsr
