#pragma once

// Finite-difference checks shared by the unit tests and the acceptance suite.

#include <algorithm>
#include <vector>

#include "cmsr/network.hpp"
#include "cmsr/ops.hpp"
#include "cmsr/training.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace cmsr;

using ConvD = BasicConvSpec<double>;
using DeconvD = BasicDeconvSpec<double>;

inline ConvD random_conv(int in, int out, int k, Padding pad, Rng& rng, bool bias = true) {
  ConvD spec(in, out, k, pad, bias);
  spec.kernels = oracle::random_tensor<double>(spec.kernels.shape(), rng);
  for (double& b : spec.bias) b = rng.uniform(-1, 1);
  return spec;
}

inline DeconvD random_deconv(int in, int out, int n, int s, Border border, Rng& rng) {
  DeconvD spec(in, out, n, s, border);
  spec.kernels = oracle::random_tensor<double>(spec.kernels.shape(), rng);
  for (double& b : spec.bias) b = rng.uniform(-1, 1);
  return spec;
}

// Finite-difference check of every gradient returned for
// L = sum(grad_out * op(input)).
template <typename Spec, typename Fwd, typename Bwd>
double layer_gradcheck(TensorD input, Spec spec, const TensorD& grad_out, Fwd fwd, Bwd bwd) {
  const auto analytic = bwd(input, spec, grad_out);
  auto loss = [&] { return oracle::sum_product(fwd(input, spec), grad_out); };
  double worst = 0.0;
  auto num_in = oracle::numeric_gradient(input.storage(), loss);
  worst = std::max(worst, oracle::max_relative_error(analytic.input.storage(), num_in));
  auto num_k = oracle::numeric_gradient(spec.kernels.storage(), loss);
  worst = std::max(worst, oracle::max_relative_error(analytic.kernels.storage(), num_k));
  auto num_b = oracle::numeric_gradient(spec.bias, loss);
  worst = std::max(worst, oracle::max_relative_error(analytic.bias, num_b));
  return worst;
}

inline auto conv_fwd = [](const TensorD& x, const ConvD& s) { return conv2d(x, s); };
inline auto conv_bwd = [](const TensorD& x, const ConvD& s, const TensorD& g) { return conv2d_backward(x, s, g); };
inline auto deconv_fwd = [](const TensorD& x, const DeconvD& s) { return deconv2d(x, s); };
inline auto deconv_bwd = [](const TensorD& x, const DeconvD& s, const TensorD& g) {
  return deconv2d_backward(x, s, g);
};

template <typename T>
void randomize(BasicNetworkParams<T>& p, Rng& rng, double lo = -0.3, double hi = 0.3) {
  for (auto& s : param_slices(p)) {
    for (T& v : s.values) v = static_cast<T>(rng.uniform(lo, hi));
  }
}

// Post-ReLU activation pattern; a finite difference whose two probes see
// different patterns straddles a kink and is not comparable.
inline std::vector<bool> relu_pattern(const ForwardTrace<double>& t) {
  std::vector<bool> p;
  auto add = [&](const TensorD& x) {
    for (double v : x.storage()) p.push_back(v > 0.0);
  };
  for (const auto& e : t.extraction) add(e);
  add(t.interp_boundary);
  add(t.bcn_hidden);
  if (!t.interp_residual.empty()) add(t.interp_residual);
  if (!t.rcn_hidden.empty()) add(t.rcn_hidden);
  return p;
}

struct GradcheckResult {
  double worst = 0.0;
  int compared = 0;
  int skipped = 0;
};

inline GradcheckResult network_gradcheck(Stage stage, int scale, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.scale = scale;
  cfg.max_channels = 2;
  NetworkParamsD p = build_network(cfg).cast<double>();
  Rng rng(seed);
  randomize(p, rng, -0.5, 0.5);
  const TensorD x = oracle::random_tensor<double>({1, 9, 9}, rng, 0.0, 1.0);
  const int hr = 9 * scale;
  const TensorD target = oracle::random_tensor<double>({1, hr, hr}, rng, 0.0, 1.0);
  const std::vector<TensorD> bmaps{oracle::random_tensor<double>({1, hr, hr}, rng, 0.0, 1.0),
                                   oracle::random_tensor<double>({1, hr, hr}, rng, 0.0, 1.0)};
  ForwardOptions opts;
  opts.need_residual = stage != Stage::boundary_context;

  auto loss = [&](const ForwardTrace<double>& t) {
    switch (stage) {
      case Stage::boundary_context:
        return loss_stage1<double>(t.outputs, target, bmaps, 0.7);
      case Stage::residual_context:
        return loss_stage2<double>(t.outputs, target);
      default:
        return loss_stage3<double>(t.outputs, target);
    }
  };
  const auto trace = forward_trace(p, x, opts);
  const auto l = loss(trace);
  NetworkParamsD grads = p.zeros_like();
  const GroupMask mask = stage_rates(stage, TrainConfig{}).trainable;
  backward(p, trace, l.grads, mask, grads);

  GradcheckResult r;
  auto ps = param_slices(p);
  auto gs = param_slices(grads);
  const double h = 1e-5;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!mask.contains(ps[i].group)) continue;
    for (std::size_t k = 0; k < ps[i].values.size(); ++k) {
      double& w = ps[i].values[k];
      const double keep = w;
      w = keep + h;
      const auto tu = forward_trace(p, x, opts);
      w = keep - h;
      const auto td = forward_trace(p, x, opts);
      w = keep;
      if (relu_pattern(tu) != relu_pattern(td)) {
        ++r.skipped;
        continue;
      }
      // Round-off in the loss limits central differences to about 1e-10
      // absolute here, so entries below 1e-5 are compared absolutely.
      const double num = (loss(tu).total - loss(td).total) / (2.0 * h);
      const double e = oracle::relative_error(gs[i].values[k], num, 1e-5);
      r.worst = std::max(r.worst, e);
      ++r.compared;
    }
  }
  return r;
}

}  // namespace gradcheck
