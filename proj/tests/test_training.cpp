#include "doctest.h"

#include <cmath>
#include <limits>

#include "cmsr/error.hpp"
#include "cmsr/imaging.hpp"
#include "cmsr/model_io.hpp"
#include "cmsr/network.hpp"
#include "cmsr/training.hpp"
#include "oracles.hpp"

using namespace cmsr;

namespace {

template <typename T>
BasicForwardOutputs<T> random_outputs(int side, Rng& rng) {
  BasicForwardOutputs<T> o;
  o.inter_hr = oracle::random_tensor<T>({1, side, side}, rng);
  o.boundary = oracle::random_tensor<T>({1, side, side}, rng);
  o.residual = oracle::random_tensor<T>({1, side, side}, rng);
  o.y = oracle::random_tensor<T>({1, side, side}, rng);
  return o;
}

template <typename T>
double mean_sq(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

bool all_zero(const Tensor& t) {
  for (float v : t.storage()) {
    if (v != 0.0f) return false;
  }
  return true;
}

std::vector<TrainingTriplet> tiny_dataset(int images, std::uint64_t seed) {
  std::vector<TrainingTriplet> out;
  for (int i = 0; i < images; ++i) {
    TrainingTriplet t;
    t.hr = synthetic_image(48, 48, seed + static_cast<std::uint64_t>(i));
    t.lr = make_lr(t.hr, 3);
    t.boundaries = {fallback_boundary(t.hr)};
    out.push_back(std::move(t));
  }
  return out;
}

NetworkParams start_point(std::uint64_t seed) {
  NetworkParams p = build_network(NetworkConfig{});
  init_passthrough(p, kDefaultHiddenGain, seed);
  return p;
}

TrainConfig quick_config(int iterations) {
  TrainConfig c;
  c.batch_size = 2;
  c.iterations = iterations;
  c.seed = 11;
  return c;
}

bool same_values(const NetworkParams& a, const NetworkParams& b, ParamGroup group) {
  auto pa = param_slices(a);
  auto pb = param_slices(b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].group != group) continue;
    for (std::size_t k = 0; k < pa[i].values.size(); ++k) {
      if (std::bit_cast<std::uint32_t>(pa[i].values[k]) != std::bit_cast<std::uint32_t>(pb[i].values[k])) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("stage-1 loss") {
  Rng rng(1);
  SUBCASE("perfect predictions") {
    auto o = random_outputs<float>(6, rng);
    const std::vector<Tensor> b{o.boundary};
    const auto l = loss_stage1<float>(o, o.inter_hr, b, 1.0);
    CHECK(l.total == 0.0);
    CHECK(all_zero(l.grads.inter_hr));
    CHECK(all_zero(l.grads.boundary));
  }
  SUBCASE("2x2 off by one") {
    BasicForwardOutputs<float> o;
    o.inter_hr = Tensor({1, 2, 2});
    o.boundary = Tensor({1, 2, 2});
    Tensor hr({1, 2, 2});
    hr.fill(1.0f);
    const std::vector<Tensor> b{o.boundary};
    CHECK(loss_stage1<float>(o, hr, b, 1.0).total == 1.0);
  }
  SUBCASE("alpha 0 is the image MSE") {
    auto o = random_outputs<double>(7, rng);
    const auto hr = oracle::random_tensor<double>({1, 7, 7}, rng);
    const std::vector<TensorD> b{oracle::random_tensor<double>({1, 7, 7}, rng)};
    const auto l = loss_stage1<double>(o, hr, b, 0.0);
    CHECK(l.total == doctest::Approx(mean_sq(o.inter_hr, hr)).epsilon(1e-12));
    for (double v : l.grads.boundary.storage()) CHECK(v == 0.0);
  }
  SUBCASE("random case against scalar arithmetic, two maps") {
    auto o = random_outputs<double>(5, rng);
    const auto hr = oracle::random_tensor<double>({1, 5, 5}, rng);
    const std::vector<TensorD> b{oracle::random_tensor<double>({1, 5, 5}, rng),
                                 oracle::random_tensor<double>({1, 5, 5}, rng)};
    const double alpha = 0.6;
    const auto l = loss_stage1<double>(o, hr, b, alpha);
    const double expect_b = 0.5 * (mean_sq(o.boundary, b[0]) + mean_sq(o.boundary, b[1]));
    CHECK(l.loss_h == doctest::Approx(mean_sq(o.inter_hr, hr)).epsilon(1e-12));
    CHECK(l.loss_b == doctest::Approx(expect_b).epsilon(1e-12));
    CHECK(l.total == doctest::Approx(l.loss_h + alpha * expect_b).epsilon(1e-12));
    for (std::size_t i = 0; i < hr.size(); ++i) {
      CHECK(l.grads.inter_hr[i] == doctest::Approx(2.0 * (o.inter_hr[i] - hr[i]) / 25.0).epsilon(1e-12));
      const double gb = alpha * ((o.boundary[i] - b[0][i]) + (o.boundary[i] - b[1][i])) / 25.0;
      CHECK(l.grads.boundary[i] == doctest::Approx(gb).epsilon(1e-12));
    }
  }
  SUBCASE("errors") {
    auto o = random_outputs<float>(4, rng);
    const std::vector<Tensor> b{Tensor({1, 4, 4})};
    CHECK_THROWS_AS(loss_stage1<float>(o, Tensor({1, 4, 5}), b, 1.0), InvalidArgument);
    CHECK_THROWS_AS(loss_stage1<float>(o, Tensor({1, 4, 4}), {}, 1.0), InvalidArgument);
    const std::vector<Tensor> bad{Tensor({1, 3, 4})};
    CHECK_THROWS_AS(loss_stage1<float>(o, Tensor({1, 4, 4}), bad, 1.0), InvalidArgument);
  }
}

TEST_CASE("stage-2 loss") {
  Rng rng(2);
  auto o = random_outputs<double>(6, rng);
  const auto hr = oracle::random_tensor<double>({1, 6, 6}, rng);
  SUBCASE("exact residual") {
    for (std::size_t i = 0; i < hr.size(); ++i) o.residual[i] = hr[i] - o.inter_hr[i];
    CHECK(loss_stage2<double>(o, hr).total == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("zero residual is the stage-1 residual energy") {
    o.residual.fill(0.0);
    CHECK(loss_stage2<double>(o, hr).total == doctest::Approx(mean_sq(o.inter_hr, hr)).epsilon(1e-12));
  }
  SUBCASE("random case against scalar arithmetic") {
    const auto l = loss_stage2<double>(o, hr);
    double s = 0.0;
    for (std::size_t i = 0; i < hr.size(); ++i) {
      const double d = hr[i] - o.inter_hr[i] - o.residual[i];
      s += d * d;
      CHECK(l.grads.residual[i] == doctest::Approx(-2.0 * d / 36.0).epsilon(1e-12));
    }
    CHECK(l.total == doctest::Approx(s / 36.0).epsilon(1e-12));
    CHECK(l.loss_d == l.total);
    CHECK(l.grads.inter_hr.empty());
    CHECK(l.grads.boundary.empty());
    CHECK(l.grads.y.empty());
  }
  CHECK_THROWS_AS(loss_stage2<double>(o, TensorD({1, 6, 7})), InvalidArgument);
}

TEST_CASE("stage-3 loss") {
  Rng rng(3);
  auto o = random_outputs<double>(6, rng);
  SUBCASE("y equals the target") { CHECK(loss_stage3<double>(o, o.y).total == 0.0); }
  SUBCASE("constant offset") {
    TensorD hr = o.y;
    for (double& v : hr.storage()) v += 0.25;
    CHECK(loss_stage3<double>(o, hr).total == doctest::Approx(0.0625).epsilon(1e-12));
  }
  SUBCASE("random case against scalar arithmetic") {
    const auto hr = oracle::random_tensor<double>({1, 6, 6}, rng);
    const auto l = loss_stage3<double>(o, hr);
    CHECK(l.total == doctest::Approx(mean_sq(o.y, hr)).epsilon(1e-12));
    for (std::size_t i = 0; i < hr.size(); ++i) {
      CHECK(l.grads.y[i] == doctest::Approx(2.0 * (o.y[i] - hr[i]) / 36.0).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(loss_stage3<double>(o, TensorD({1, 5, 6})), InvalidArgument);
}

TEST_CASE("stage-loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto o = random_outputs<double>(5, rng);
    const auto hr = oracle::random_tensor<double>({1, 5, 5}, rng);
    const std::vector<TensorD> b{oracle::random_tensor<double>({1, 5, 5}, rng),
                                 oracle::random_tensor<double>({1, 5, 5}, rng)};
    const double alpha = rng.uniform(0.0, 2.0);
    auto check = [&](TensorD& wrt, const TensorD& analytic, const std::function<double()>& f) {
      const auto num = oracle::numeric_gradient(wrt.storage(), f);
      CHECK(oracle::max_relative_error(analytic.storage(), num) < 1e-4);
    };
    const auto l1 = loss_stage1<double>(o, hr, b, alpha);
    check(o.inter_hr, l1.grads.inter_hr, [&] { return loss_stage1<double>(o, hr, b, alpha).total; });
    check(o.boundary, l1.grads.boundary, [&] { return loss_stage1<double>(o, hr, b, alpha).total; });
    const auto l2 = loss_stage2<double>(o, hr);
    check(o.residual, l2.grads.residual, [&] { return loss_stage2<double>(o, hr).total; });
    const auto l3 = loss_stage3<double>(o, hr);
    check(o.y, l3.grads.y, [&] { return loss_stage3<double>(o, hr).total; });
  }
}

TEST_CASE("doubling alpha doubles the boundary contribution") {
  Rng rng(9);
  NetworkConfig cfg;
  cfg.scale = 2;
  cfg.max_channels = 3;
  NetworkParamsD p = build_network(cfg).cast<double>();
  for (auto& s : param_slices(p)) {
    for (double& v : s.values) v = rng.uniform(-0.4, 0.4);
  }
  const TensorD x = oracle::random_tensor<double>({1, 10, 10}, rng, 0.0, 1.0);
  const TensorD hr = oracle::random_tensor<double>({1, 20, 20}, rng, 0.0, 1.0);
  const std::vector<TensorD> b{oracle::random_tensor<double>({1, 20, 20}, rng, 0.0, 1.0)};
  ForwardOptions opts;
  opts.need_residual = false;
  const auto trace = forward_trace(p, x, opts);
  const GroupMask mask = stage_rates(Stage::boundary_context, TrainConfig{}).trainable;

  auto at = [&](double alpha) {
    const auto l = loss_stage1<double>(trace.outputs, hr, b, alpha);
    NetworkParamsD g = p.zeros_like();
    backward(p, trace, l.grads, mask, g);
    std::vector<double> flat;
    for (const auto& s : param_slices(std::as_const(g))) flat.insert(flat.end(), s.values.begin(), s.values.end());
    return std::pair{l.total, flat};
  };
  const auto [l0, g0] = at(0.0);
  const auto [l1, g1] = at(1.0);
  const auto [l2, g2] = at(2.0);
  CHECK(l2 - l0 == doctest::Approx(2.0 * (l1 - l0)).epsilon(1e-12));
  double largest = 0.0;
  for (std::size_t i = 0; i < g0.size(); ++i) largest = std::max(largest, std::abs(g1[i] - g0[i]));
  double worst = 0.0;
  for (std::size_t i = 0; i < g0.size(); ++i) {
    worst = std::max(worst, std::abs((g2[i] - g0[i]) - 2.0 * (g1[i] - g0[i])));
  }
  CHECK(worst <= 1e-12 * largest);
  CHECK(largest > 0.0);
}

TEST_CASE("sgd_step arithmetic") {
  NetworkParams p = build_network(NetworkConfig{});
  NetworkParams g = p.zeros_like();
  NetworkParams v = p.zeros_like();
  RateMap rates;
  rates.rest = 0.1;
  rates.last = 0.01;
  rates.trainable = GroupMask::all();
  rates.last_layer = GroupMask::all();

  SUBCASE("plain step") {
    p.extraction[0].kernels[0] = 1.0f;
    g.extraction[0].kernels[0] = 2.0f;
    sgd_step(p, g, v, rates, 0.0);
    CHECK(p.extraction[0].kernels[0] == doctest::Approx(0.8).epsilon(1e-7));
  }
  SUBCASE("zero gradient and velocity leave parameters alone") {
    Rng rng(4);
    for (auto& s : param_slices(p)) {
      for (float& x : s.values) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    const NetworkParams before = p;
    sgd_step(p, g, v, rates, 0.9);
    for (auto group : {ParamGroup::shared, ParamGroup::image, ParamGroup::boundary, ParamGroup::residual,
                       ParamGroup::fusion}) {
      CHECK(same_values(p, before, group));
    }
  }
  SUBCASE("two momentum steps follow the recurrence") {
    const double w0 = 0.5, ga = 0.3, gb = -0.7, m = 0.9, lr = 0.1;
    p.extraction[1].kernels[3] = static_cast<float>(w0);
    g.extraction[1].kernels[3] = static_cast<float>(ga);
    sgd_step(p, g, v, rates, m);
    g.extraction[1].kernels[3] = static_cast<float>(gb);
    sgd_step(p, g, v, rates, m);
    const double v1 = -lr * ga;
    const double v2 = m * v1 - lr * gb;
    CHECK(p.extraction[1].kernels[3] == doctest::Approx(w0 + v1 + v2).epsilon(1e-7));
    CHECK(v.extraction[1].kernels[3] == doctest::Approx(v2).epsilon(1e-7));
  }
  SUBCASE("output layers take the last-layer rate") {
    p.rcn_out.kernels[0] = 1.0f;
    g.rcn_out.kernels[0] = 1.0f;
    p.rcn_hidden.kernels[0] = 1.0f;
    g.rcn_hidden.kernels[0] = 1.0f;
    sgd_step(p, g, v, rates, 0.0);
    CHECK(p.rcn_out.kernels[0] == doctest::Approx(0.99).epsilon(1e-7));
    CHECK(p.rcn_hidden.kernels[0] == doctest::Approx(0.9).epsilon(1e-7));
  }
  SUBCASE("frozen groups are untouched") {
    rates.trainable = GroupMask::only({ParamGroup::residual});
    g.extraction[0].kernels[0] = 5.0f;
    g.rcn_hidden.kernels[0] = 5.0f;
    sgd_step(p, g, v, rates, 0.0);
    CHECK(p.extraction[0].kernels[0] == 0.0f);
    CHECK(p.rcn_hidden.kernels[0] != 0.0f);
  }
  SUBCASE("non-finite gradient names the tensor") {
    g.rcn_hidden.kernels[2] = std::numeric_limits<float>::quiet_NaN();
    try {
      sgd_step(p, g, v, rates, 0.9);
      FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
      CHECK(std::string(e.what()).find("rcn") != std::string::npos);
    }
  }
}

TEST_CASE("per-stage rate maps") {
  TrainConfig c;
  const RateMap s1 = stage_rates(Stage::boundary_context, c);
  CHECK(s1.rate(ParamGroup::shared, false) == c.lr_rest);
  CHECK(s1.rate(ParamGroup::image, true) == c.lr_last);
  CHECK(s1.rate(ParamGroup::boundary, true) == c.lr_last);
  CHECK(s1.rate(ParamGroup::residual, false) == 0.0);
  CHECK(s1.rate(ParamGroup::fusion, true) == 0.0);

  const RateMap s2 = stage_rates(Stage::residual_context, c);
  CHECK(s2.rate(ParamGroup::residual, true) == c.lr_last);
  CHECK(s2.rate(ParamGroup::residual, false) == c.lr_rest);
  for (auto g : {ParamGroup::shared, ParamGroup::image, ParamGroup::boundary, ParamGroup::fusion}) {
    CHECK(s2.rate(g, false) == 0.0);
    CHECK(s2.rate(g, true) == 0.0);
  }

  const RateMap s3 = stage_rates(Stage::joint, c);
  CHECK(s3.rate(ParamGroup::fusion, true) == doctest::Approx(c.lr_last * 0.1));
  CHECK(s3.rate(ParamGroup::shared, false) == doctest::Approx(c.lr_rest * 0.1));
  CHECK(s3.rate(ParamGroup::image, true) == doctest::Approx(c.lr_rest * 0.1));
  CHECK(s3.rate(ParamGroup::residual, false) == doctest::Approx(c.lr_rest * 0.1));
  c.use_rcn = false;
  CHECK(stage_rates(Stage::joint, c).rate(ParamGroup::residual, false) == 0.0);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [](auto edit) {
    TrainConfig t;
    edit(t);
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
  };
  bad([](TrainConfig& t) { t.lr_last = 1e-3; });
  bad([](TrainConfig& t) { t.lr_rest = 0.0; });
  bad([](TrainConfig& t) { t.momentum = 1.0; });
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.iterations = -1; });
  CHECK(desk_train_config().iterations == 2000);
}

TEST_CASE("trainer rejects unusable inputs") {
  const std::vector<TrainingTriplet> empty;
  CHECK_THROWS_AS(Trainer(start_point(1), empty, quick_config(1), LossConfig{}), InvalidArgument);
  auto data = tiny_dataset(1, 3);
  CHECK_THROWS_AS(Trainer(start_point(1), data, quick_config(1), LossConfig{-1.0}), InvalidArgument);
  data[0].boundaries.clear();
  CHECK_THROWS_AS(Trainer(start_point(1), data, quick_config(1), LossConfig{}), InvalidArgument);
}

TEST_CASE("stage 2 leaves the shared, image and boundary groups bitwise unchanged") {
  const auto data = tiny_dataset(3, 20);
  Trainer t(start_point(2), data, quick_config(15), LossConfig{});
  t.run_stage(Stage::boundary_context);
  const NetworkParams after1 = t.params();
  t.run_stage(Stage::residual_context);
  CHECK(same_values(t.params(), after1, ParamGroup::shared));
  CHECK(same_values(t.params(), after1, ParamGroup::image));
  CHECK(same_values(t.params(), after1, ParamGroup::boundary));
  CHECK(same_values(t.params(), after1, ParamGroup::fusion));
  CHECK_FALSE(same_values(t.params(), after1, ParamGroup::residual));
}

TEST_CASE("seeded runs are byte-identical") {
  const auto data = tiny_dataset(3, 30);
  auto run = [&](int threads) {
    TrainConfig c = quick_config(6);
    c.threads = threads;
    c.validate_every = 3;
    std::vector<ValidationImage> val{{data[0].lr, data[0].hr}};
    const auto r = train(data, start_point(3), c, LossConfig{}, val);
    return std::pair{r.log.to_csv(), encode_records(model_to_records(r.params))};
  };
  const auto a = run(1);
  const auto b = run(1);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  const auto c = run(3);
  CHECK(a.first == c.first);
  CHECK(a.second == c.second);
}

TEST_CASE("train log layout") {
  const auto data = tiny_dataset(2, 40);
  TrainConfig c = quick_config(3);
  c.validate_every = 2;
  std::vector<ValidationImage> val{{data[1].lr, data[1].hr}};
  const auto r = train(data, start_point(4), c, LossConfig{}, val);
  REQUIRE(r.log.rows.size() == 9);
  for (std::size_t i = 1; i < r.log.rows.size(); ++i) CHECK(r.log.rows[i].iter > r.log.rows[i - 1].iter);
  const std::string csv = r.log.to_csv();
  CHECK(csv.rfind("iter,stage,loss_h,loss_b,loss_d,loss_total,val_psnr\n", 0) == 0);
  const auto& s1 = r.log.rows[0];
  CHECK(s1.stage == 1);
  CHECK(s1.loss_h.has_value());
  CHECK(s1.loss_b.has_value());
  CHECK_FALSE(s1.loss_d.has_value());
  CHECK_FALSE(s1.val_psnr.has_value());
  CHECK(r.log.rows[1].val_psnr.has_value());
  const auto& s2 = r.log.rows[3];
  CHECK(s2.stage == 2);
  CHECK(s2.loss_d.has_value());
  CHECK_FALSE(s2.loss_h.has_value());
  CHECK(r.log.rows[8].stage == 3);
  CHECK(csv.find("\n1,1,") != std::string::npos);
  CHECK(csv.find(",,") != std::string::npos);
}

TEST_CASE("without the RCN stage 2 is skipped and the residual stays zero") {
  const auto data = tiny_dataset(2, 50);
  TrainConfig c = quick_config(4);
  c.use_rcn = false;
  const auto r = train(data, start_point(5), c, LossConfig{}, {});
  REQUIRE(r.log.rows.size() == 8);
  for (const auto& row : r.log.rows) CHECK(row.stage != 2);
  CHECK(all_zero(r.params.rcn_out.kernels));
  const ImagePlane sr = super_resolve(r.params, data[0].lr, false);
  ForwardOptions opts;
  opts.use_residual = false;
  const auto out = forward(r.params, data[0].lr, opts);
  CHECK(sr == conv2d(out.inter_hr, r.params.fusion));
}

TEST_CASE("stage-1 loss is non-increasing on one sample without momentum") {
  const auto data = tiny_dataset(1, 60);
  TrainConfig c = quick_config(300);
  c.batch_size = 1;
  c.momentum = 0.0;
  Trainer t(start_point(6), data, c, LossConfig{});
  t.run_stage(Stage::boundary_context);
  const auto& rows = t.log().rows;
  REQUIRE(rows.size() == 300);
  for (std::size_t i = 0; i + 100 < rows.size(); ++i) {
    CHECK(rows[i + 100].loss_total <= rows[i].loss_total);
  }
}

TEST_CASE("divergence stops training with the last good parameters") {
  const auto data = tiny_dataset(2, 70);
  TrainConfig c = quick_config(50);
  c.gradient_scale = 1e9;
  c.momentum = 0.0;
  Trainer t(start_point(7), data, c, LossConfig{});
  try {
    t.run_stage(Stage::boundary_context);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(!e.log().rows.empty());
    for (const auto& s : param_slices(e.last_good())) {
      for (float v : s.values) CHECK(std::isfinite(v));
    }
  }
}
