#include "cmsr/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "cmsr/metrics.hpp"

namespace cmsr {

namespace {

template <typename T>
void require_same(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) throw InvalidArgument(std::string(what) + ": shape mismatch");
}

// mean((target - pred)^2) and its gradient wrt pred, scaled by `weight`.
template <typename T>
double mse(const BasicTensor<T>& pred, const BasicTensor<T>& target, double weight, BasicTensor<T>* grad) {
  const double n = static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += d * d;
    if (grad) (*grad)[i] += static_cast<T>(weight * 2.0 * d / n);
  }
  return sum / n;
}

void scale_grads(NetworkParams& grads, double factor) {
  const auto f = static_cast<float>(factor);
  for (auto& s : param_slices(grads)) {
    for (float& v : s.values) v *= f;
  }
}

void add_grads(NetworkParams& acc, const NetworkParams& g) {
  auto a = param_slices(acc);
  auto b = param_slices(g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].values.size(); ++k) a[i].values[k] += b[i].values[k];
  }
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_last > 0.0) || !(lr_rest > 0.0)) throw InvalidArgument("learning rates must be positive");
  if (lr_last > lr_rest) throw InvalidArgument("lr_last must not exceed lr_rest");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("momentum must be in [0, 1)");
  if (batch_size <= 0) throw InvalidArgument("batch size must be positive");
  if (iterations < 0) throw InvalidArgument("iterations must be non-negative");
  if (threads <= 0) throw InvalidArgument("threads must be positive");
  if (!(gradient_scale > 0.0)) throw InvalidArgument("gradient scale must be positive");
}

TrainConfig desk_train_config() {
  TrainConfig c;
  c.iterations = 2000;
  c.batch_size = 16;
  return c;
}

template <typename T>
StageLoss<T> loss_stage1(const BasicForwardOutputs<T>& out, const BasicTensor<T>& hr,
                         std::span<const BasicTensor<T>> boundaries, double alpha) {
  require_same(out.inter_hr, hr, "loss_stage1");
  if (boundaries.empty()) throw InvalidArgument("loss_stage1: at least one boundary map required");
  StageLoss<T> r;
  r.grads.inter_hr = BasicTensor<T>(hr.shape());
  r.grads.boundary = BasicTensor<T>(hr.shape());
  r.loss_h = mse(out.inter_hr, hr, 1.0, &r.grads.inter_hr);
  const double per_map = alpha / static_cast<double>(boundaries.size());
  double lb = 0.0;
  for (const auto& b : boundaries) {
    require_same(out.boundary, b, "loss_stage1 boundary");
    lb += mse(out.boundary, b, per_map, &r.grads.boundary);
  }
  r.loss_b = lb / static_cast<double>(boundaries.size());
  r.total = r.loss_h + alpha * r.loss_b;
  return r;
}

template <typename T>
StageLoss<T> loss_stage2(const BasicForwardOutputs<T>& out, const BasicTensor<T>& hr) {
  require_same(out.inter_hr, hr, "loss_stage2");
  require_same(out.residual, hr, "loss_stage2");
  // Target for the residual is what the frozen intermediate image misses.
  BasicTensor<T> target(hr.shape());
  for (std::size_t i = 0; i < hr.size(); ++i) target[i] = hr[i] - out.inter_hr[i];
  StageLoss<T> r;
  r.grads.residual = BasicTensor<T>(hr.shape());
  r.loss_d = mse(out.residual, target, 1.0, &r.grads.residual);
  r.total = r.loss_d;
  return r;
}

template <typename T>
StageLoss<T> loss_stage3(const BasicForwardOutputs<T>& out, const BasicTensor<T>& hr) {
  require_same(out.y, hr, "loss_stage3");
  StageLoss<T> r;
  r.grads.y = BasicTensor<T>(hr.shape());
  r.loss_h = mse(out.y, hr, 1.0, &r.grads.y);
  r.total = r.loss_h;
  return r;
}

RateMap stage_rates(Stage stage, const TrainConfig& config) {
  RateMap m;
  switch (stage) {
    case Stage::boundary_context:
      m.rest = config.lr_rest;
      m.last = config.lr_last;
      m.trainable = GroupMask::only({ParamGroup::shared, ParamGroup::image, ParamGroup::boundary});
      m.last_layer = GroupMask::only({ParamGroup::image, ParamGroup::boundary});
      break;
    case Stage::residual_context:
      m.rest = config.lr_rest;
      m.last = config.lr_last;
      m.trainable = GroupMask::only({ParamGroup::residual});
      m.last_layer = m.trainable;
      break;
    case Stage::joint:
      m.rest = config.lr_rest * config.joint_rate_scale;
      m.last = config.lr_last * config.joint_rate_scale;
      m.trainable = GroupMask::all();
      m.trainable.residual = config.use_rcn;
      // The boundary head gets no signal from the final objective.
      m.trainable.boundary = false;
      m.last_layer = GroupMask::only({ParamGroup::fusion});
      break;
  }
  return m;
}

void sgd_step(NetworkParams& params, const NetworkParams& grads, NetworkParams& velocity,
              const RateMap& rates, double momentum) {
  auto p = param_slices(params);
  auto g = param_slices(grads);
  auto v = param_slices(velocity);
  if (p.size() != g.size() || p.size() != v.size()) {
    throw InvalidArgument("sgd_step: gradient layout does not match parameters");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].values.size() != g[i].values.size() || p[i].values.size() != v[i].values.size()) {
      throw InvalidArgument("sgd_step: slice " + p[i].name + " size mismatch");
    }
    const double lr = rates.rate(p[i].group, p[i].output_layer);
    if (lr == 0.0) continue;
    for (float gv : g[i].values) {
      if (!std::isfinite(gv)) throw NumericFailure("non-finite gradient in " + p[i].name, p[i].name);
    }
    const auto mom = static_cast<float>(momentum);
    const auto rate = static_cast<float>(lr);
    for (std::size_t k = 0; k < p[i].values.size(); ++k) {
      v[i].values[k] = mom * v[i].values[k] - rate * g[i].values[k];
      p[i].values[k] += v[i].values[k];
    }
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "iter,stage,loss_h,loss_b,loss_d,loss_total,val_psnr\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& r : rows) {
    out += std::to_string(r.iter) + "," + std::to_string(r.stage) + "," + opt(r.loss_h) + "," +
           opt(r.loss_b) + "," + opt(r.loss_d) + "," + fmt(r.loss_total) + "," + opt(r.val_psnr) + "\n";
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << to_csv();
}

Trainer::Trainer(NetworkParams params, const std::vector<TrainingTriplet>& dataset, TrainConfig config,
                 LossConfig loss, std::vector<ValidationImage> validation)
    : params_(std::move(params)),
      velocity_(params_.zeros_like()),
      dataset_(dataset),
      config_(config),
      loss_(loss),
      validation_(std::move(validation)),
      rng_(config.seed) {
  config_.validate();
  if (dataset_.empty()) throw InvalidArgument("training dataset is empty");
  if (loss_.alpha < 0.0) throw InvalidArgument("alpha must be non-negative");
  for (const auto& t : dataset_) {
    if (t.boundaries.empty()) throw InvalidArgument("training triplet without a boundary map");
  }
}

double Trainer::validation_psnr() const {
  if (validation_.empty()) return kInfinity;
  double total = 0.0;
  for (const auto& v : validation_) {
    ImagePlane sr = super_resolve(params_, v.lr, config_.use_rcn);
    for (float& x : sr.storage()) x = std::clamp(x, 0.0f, 1.0f);
    total += psnr(shave(v.hr, params_.scale), shave(sr, params_.scale));
  }
  return total / static_cast<double>(validation_.size());
}

namespace {

struct SampleResult {
  double total = 0.0;
  double loss_h = 0.0;
  double loss_b = 0.0;
  double loss_d = 0.0;
};

SampleResult sample_gradient(const NetworkParams& params, const TrainingTriplet& t, Stage stage,
                             const TrainConfig& config, const LossConfig& loss, NetworkParams* grads) {
  ForwardOptions opts;
  opts.use_residual = config.use_rcn;
  opts.need_residual = stage != Stage::boundary_context;
  const auto trace = forward_trace(params, t.lr, opts);
  StageLoss<float> l;
  switch (stage) {
    case Stage::boundary_context:
      l = loss_stage1<float>(trace.outputs, t.hr, t.boundaries, loss.alpha);
      break;
    case Stage::residual_context:
      l = loss_stage2<float>(trace.outputs, t.hr);
      break;
    case Stage::joint:
      l = loss_stage3<float>(trace.outputs, t.hr);
      break;
  }
  if (grads) {
    if (config.gradient_scale != 1.0) {
      const auto scale = static_cast<float>(config.gradient_scale);
      for (auto* g : {&l.grads.inter_hr, &l.grads.boundary, &l.grads.residual, &l.grads.y}) {
        for (float& v : g->storage()) v *= scale;
      }
    }
    backward(params, trace, l.grads, stage_rates(stage, config).trainable, *grads);
  }
  return {l.total, l.loss_h, l.loss_b, l.loss_d};
}

}  // namespace

double Trainer::evaluate_loss(Stage stage, std::span<const std::size_t> batch) const {
  double total = 0.0;
  for (std::size_t idx : batch) {
    total += sample_gradient(params_, dataset_[idx], stage, config_, loss_, nullptr).total;
  }
  return total / static_cast<double>(batch.size());
}

double Trainer::step(Stage stage, std::span<const std::size_t> batch, TrainLogRow& row) {
  NetworkParams grads = params_.zeros_like();
  std::vector<SampleResult> results(batch.size());
  const int threads = std::min<int>(config_.threads, static_cast<int>(batch.size()));

  if (threads <= 1) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      results[b] = sample_gradient(params_, dataset_[batch[b]], stage, config_, loss_, &grads);
    }
  } else if (config_.deterministic) {
    // Per-sample buffers summed in batch order: bitwise equal to the sequential path.
    std::vector<NetworkParams> per(batch.size(), grads);
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t b = static_cast<std::size_t>(t); b < batch.size(); b += static_cast<std::size_t>(threads)) {
          results[b] = sample_gradient(params_, dataset_[batch[b]], stage, config_, loss_, &per[b]);
        }
      });
    }
    pool.clear();
    for (const auto& g : per) add_grads(grads, g);
  } else {
    std::vector<NetworkParams> per(static_cast<std::size_t>(threads), grads);
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t b = static_cast<std::size_t>(t); b < batch.size(); b += static_cast<std::size_t>(threads)) {
          results[b] = sample_gradient(params_, dataset_[batch[b]], stage, config_, loss_,
                                       &per[static_cast<std::size_t>(t)]);
        }
      });
    }
    pool.clear();
    for (const auto& g : per) add_grads(grads, g);
  }

  SampleResult mean;
  for (const auto& r : results) {
    mean.total += r.total;
    mean.loss_h += r.loss_h;
    mean.loss_b += r.loss_b;
    mean.loss_d += r.loss_d;
  }
  const double n = static_cast<double>(batch.size());
  mean.total /= n;
  mean.loss_h /= n;
  mean.loss_b /= n;
  mean.loss_d /= n;

  switch (stage) {
    case Stage::boundary_context:
      row.loss_h = mean.loss_h;
      row.loss_b = mean.loss_b;
      break;
    case Stage::residual_context:
      row.loss_d = mean.loss_d;
      break;
    case Stage::joint:
      row.loss_h = mean.loss_h;
      break;
  }
  row.loss_total = mean.total;

  if (!std::isfinite(mean.total) || mean.total > config_.divergence_limit) {
    throw TrainingDiverged("training diverged at iteration " + std::to_string(row.iter) + " (stage " +
                               std::to_string(row.stage) + ", loss " + fmt(mean.total) + ")",
                           params_, log_);
  }

  scale_grads(grads, 1.0 / n);
  sgd_step(params_, grads, velocity_, stage_rates(stage, config_), config_.momentum);
  return mean.total;
}

void Trainer::run_stage(Stage stage) {
  if (stage == Stage::residual_context && !config_.use_rcn) return;
  velocity_ = params_.zeros_like();
  std::vector<std::size_t> batch(static_cast<std::size_t>(config_.batch_size));
  for (int t = 0; t < config_.iterations; ++t) {
    for (auto& b : batch) b = static_cast<std::size_t>(rng_.below(dataset_.size()));
    TrainLogRow row;
    row.iter = ++iter_;
    row.stage = static_cast<int>(stage);
    step(stage, batch, row);
    if (config_.validate_every > 0 && !validation_.empty() &&
        (t + 1) % config_.validate_every == 0) {
      row.val_psnr = validation_psnr();
    }
    log_.rows.push_back(row);
    if (on_iteration) on_iteration(row);
  }
}

void Trainer::run_all() {
  run_stage(Stage::boundary_context);
  run_stage(Stage::residual_context);
  run_stage(Stage::joint);
}

TrainResult train(const std::vector<TrainingTriplet>& dataset, NetworkParams initial,
                  const TrainConfig& config, const LossConfig& loss,
                  std::vector<ValidationImage> validation) {
  Trainer trainer(std::move(initial), dataset, config, loss, std::move(validation));
  trainer.run_all();
  return trainer.result();
}

ImagePlane super_resolve(const NetworkParams& params, const ImagePlane& lr, bool use_rcn) {
  ForwardOptions opts;
  opts.use_residual = use_rcn;
  return forward(params, lr, opts).y;
}

#define CMSR_INSTANTIATE_LOSSES(T)                                                                 \
  template StageLoss<T> loss_stage1(const BasicForwardOutputs<T>&, const BasicTensor<T>&,          \
                                    std::span<const BasicTensor<T>>, double);                      \
  template StageLoss<T> loss_stage2(const BasicForwardOutputs<T>&, const BasicTensor<T>&);         \
  template StageLoss<T> loss_stage3(const BasicForwardOutputs<T>&, const BasicTensor<T>&);

CMSR_INSTANTIATE_LOSSES(float)
CMSR_INSTANTIATE_LOSSES(double)

}  // namespace cmsr
