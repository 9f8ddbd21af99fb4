#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmsr/imaging.hpp"
#include "cmsr/network.hpp"
#include "cmsr/random.hpp"

namespace cmsr {

struct LossConfig {
  double alpha = 1.0;  // weight of the boundary term in stage 1
};

enum class Stage : int { boundary_context = 1, residual_context = 2, joint = 3 };

struct TrainConfig {
  double lr_last = 1e-5;  // output layer of the active head
  double lr_rest = 1e-4;
  double momentum = 0.9;
  int batch_size = 64;
  int iterations = 50000;  // per stage
  std::uint64_t seed = 0;
  bool deterministic = true;
  bool use_rcn = true;  // false: stage 2 skipped and I_r == 0 everywhere
  // Stage-3 rates are the stage-1/2 rates times this factor.
  double joint_rate_scale = 0.1;
  // Losses are per-pixel means; their gradients are multiplied by this
  // factor before the update so the default rates give usable steps.
  double gradient_scale = 50.0;
  double divergence_limit = 1e6;
  int validate_every = 0;  // 0 disables validation PSNR samples
  int threads = 1;

  void validate() const;
};

// Desk-scale defaults: T = 2,000 iterations per stage, batch 16.
TrainConfig desk_train_config();

template <typename T>
struct StageLoss {
  double total = 0.0;
  double loss_h = 0.0;  // stage 1 image term / stage 3 final term
  double loss_b = 0.0;  // stage 1 boundary term (unweighted)
  double loss_d = 0.0;  // stage 2 residual term
  OutputGrads<T> grads;
};

// L = mean((I_h - I_interHR)^2) + alpha * mean over maps of mean((I_b - I_w)^2).
template <typename T>
StageLoss<T> loss_stage1(const BasicForwardOutputs<T>& out, const BasicTensor<T>& hr,
                         std::span<const BasicTensor<T>> boundaries, double alpha);

// L_d = mean((I_h - I_interHR - I_r)^2); gradient flows to I_r only.
template <typename T>
StageLoss<T> loss_stage2(const BasicForwardOutputs<T>& out, const BasicTensor<T>& hr);

// L = mean((I_h - y)^2).
template <typename T>
StageLoss<T> loss_stage3(const BasicForwardOutputs<T>& out, const BasicTensor<T>& hr);

// Learning rate per parameter slice for the active stage; 0 freezes.
struct RateMap {
  double rest = 0.0;
  double last = 0.0;
  GroupMask trainable{false, false, false, false, false};
  // Groups whose output layer takes `last` in this stage.
  GroupMask last_layer{false, false, false, false, false};

  double rate(ParamGroup group, bool output_layer) const noexcept {
    if (!trainable.contains(group)) return 0.0;
    return output_layer && last_layer.contains(group) ? last : rest;
  }
};

RateMap stage_rates(Stage stage, const TrainConfig& config);

// v <- momentum * v - lr * g; w <- w + v. Frozen slices are untouched.
// Throws NumericFailure naming the slice on a non-finite gradient.
void sgd_step(NetworkParams& params, const NetworkParams& grads, NetworkParams& velocity,
              const RateMap& rates, double momentum);

struct TrainLogRow {
  int iter = 0;
  int stage = 0;
  std::optional<double> loss_h;
  std::optional<double> loss_b;
  std::optional<double> loss_d;
  double loss_total = 0.0;
  std::optional<double> val_psnr;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  // Header `iter,stage,loss_h,loss_b,loss_d,loss_total,val_psnr`; inactive
  // terms are empty fields.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Full-image pair scored by validation PSNR (shave = scale).
struct ValidationImage {
  ImagePlane lr;
  ImagePlane hr;
};

// Raised when a loss exceeds the divergence limit or turns non-finite.
// Carries the parameters from before the failing update and the log so far.
class TrainingDiverged : public NumericFailure {
 public:
  TrainingDiverged(const std::string& what, NetworkParams last_good, TrainLog log)
      : NumericFailure(what, "training"), last_good_(std::move(last_good)), log_(std::move(log)) {}
  const NetworkParams& last_good() const noexcept { return last_good_; }
  const TrainLog& log() const noexcept { return log_; }

 private:
  NetworkParams last_good_;
  TrainLog log_;
};

struct TrainResult {
  NetworkParams params;
  TrainLog log;
};

// Mutable training run over one parameter set. Stages can be run one at a
// time so ablations can share a stage-1 checkpoint.
class Trainer {
 public:
  Trainer(NetworkParams params, const std::vector<TrainingTriplet>& dataset, TrainConfig config,
          LossConfig loss, std::vector<ValidationImage> validation = {});

  void run_stage(Stage stage);
  void run_all();

  const NetworkParams& params() const noexcept { return params_; }
  const TrainLog& log() const noexcept { return log_; }
  TrainResult result() const { return {params_, log_}; }

  // Loss of one stage on one batch without updating.
  double evaluate_loss(Stage stage, std::span<const std::size_t> batch) const;
  double validation_psnr() const;

  // Hook after every iteration (iteration, stage, row); used for progress output.
  std::function<void(const TrainLogRow&)> on_iteration;

 private:
  double step(Stage stage, std::span<const std::size_t> batch, TrainLogRow& row);

  NetworkParams params_;
  NetworkParams velocity_;
  const std::vector<TrainingTriplet>& dataset_;
  TrainConfig config_;
  LossConfig loss_;
  std::vector<ValidationImage> validation_;
  TrainLog log_;
  Rng rng_;
  int iter_ = 0;
};

// Stage 1, then stage 2 (unless use_rcn is off), then stage 3.
TrainResult train(const std::vector<TrainingTriplet>& dataset, NetworkParams initial,
                  const TrainConfig& config, const LossConfig& loss,
                  std::vector<ValidationImage> validation = {});

// Luminance SR through a trained model (outputs unclamped).
ImagePlane super_resolve(const NetworkParams& params, const ImagePlane& lr, bool use_rcn = true);

}  // namespace cmsr
