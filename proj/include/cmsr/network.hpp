#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmsr/ops.hpp"

namespace cmsr {

enum class Profile : std::uint8_t { common = 0, deep = 1 };

struct NetworkConfig {
  int scale = 3;
  Profile profile = Profile::common;
  // 0 keeps the full widths; a positive cap shrinks every layer to at most
  // this many channels (used for end-to-end gradient checks).
  int max_channels = 0;
  std::uint64_t seed = 0;

  // 4 for the common profile, 18 for the deep one; includes the 1x1 shrinking layer.
  int extraction_depth() const noexcept { return profile == Profile::deep ? 18 : 4; }
};

// Disjoint ownership of every learnable value.
enum class ParamGroup : std::uint8_t {
  shared,    // feature extraction, shrinking, both interpolators
  image,     // BCN hidden layer and the HR-image output channel
  boundary,  // BCN boundary output channel
  residual,  // RCN
  fusion,    // 3x3 fusion filter
};

const char* to_string(ParamGroup g) noexcept;

template <typename T>
struct BasicNetworkParams {
  int scale = 3;
  Profile profile = Profile::common;
  std::vector<BasicConvSpec<T>> extraction;  // last entry is the 1x1 shrinking layer
  BasicDeconvSpec<T> interp_boundary;        // Interpolation-1, feeds BCN
  BasicDeconvSpec<T> interp_residual;        // Interpolation-2, feeds RCN
  BasicConvSpec<T> bcn_hidden;
  BasicConvSpec<T> bcn_out;  // channel 0: intermediate HR image, channel 1: boundary map
  BasicConvSpec<T> rcn_hidden;
  BasicConvSpec<T> rcn_out;
  BasicConvSpec<T> fusion;  // 1 -> 1, 3x3, no bias

  template <typename U>
  BasicNetworkParams<U> cast() const;

  // Same architecture, every value zero. Used for gradient and velocity buffers.
  BasicNetworkParams zeros_like() const;
};

using NetworkParams = BasicNetworkParams<float>;
using NetworkParamsD = BasicNetworkParams<double>;

// A contiguous run of learnable values with its group and optimizer role.
template <typename T>
struct ParamSlice {
  std::string name;
  ParamGroup group;
  bool output_layer;  // output conv of BCN, RCN, or the fusion filter
  std::span<T> values;
};

// Slices in a fixed order; two params objects of the same architecture give
// aligned lists. The BCN output layer is split per channel between the
// image and boundary groups.
template <typename T>
std::vector<ParamSlice<T>> param_slices(BasicNetworkParams<T>& params);

template <typename T>
std::vector<ParamSlice<const T>> param_slices(const BasicNetworkParams<T>& params);

int deconv_kernel_size(int scale);

// Allocates every layer at its configured shape; all values zero except the
// fusion filter, which starts as the center delta.
NetworkParams build_network(const NetworkConfig& config);

// Kernel weights only unless include_bias is set (60,436 for the x3 network).
std::size_t parameter_count(const NetworkParams& params, bool include_fusion,
                            bool include_bias = false);

// Every kernel entry i.i.d. N(0, std^2); biases zero; the fusion filter is
// reset to the center delta.
void init_gaussian(NetworkParams& params, double stddev, std::uint64_t seed);

// [8, 8, n, n]: diagonal slices hold separable bicubic weights centered on
// the anchor tap, off-diagonal slices zero.
Tensor init_deconv_bicubic(int scale, int channels = 8);

// Network start point used for desk-scale training: channel 0 carries the
// luminance through extraction, both interpolators are bicubic and the BCN
// image channel copies it, so the intermediate HR image begins as the
// bicubic upscale. Remaining hidden channels get He-normal weights times
// `hidden_gain`; the boundary and residual output layers start at zero.
inline constexpr double kDefaultHiddenGain = 0.3;
void init_passthrough(NetworkParams& params, double hidden_gain, std::uint64_t seed);

template <typename T>
struct BasicForwardOutputs {
  BasicTensor<T> inter_hr;  // [1, sH, sW]
  BasicTensor<T> boundary;  // [1, sH, sW]
  BasicTensor<T> residual;  // [1, sH, sW]
  BasicTensor<T> y;         // fusion(inter_hr) + residual
};

using ForwardOutputs = BasicForwardOutputs<float>;

struct ForwardOptions {
  bool use_residual = true;  // false: the RCN branch is skipped and I_r == 0
  bool need_residual = true;  // compute the RCN branch at all
};

// Activations kept for the backward pass.
template <typename T>
struct ForwardTrace {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> extraction;  // post-activation output per layer
  BasicTensor<T> interp_boundary;          // post-ReLU
  BasicTensor<T> bcn_hidden;               // post-ReLU
  BasicTensor<T> interp_residual;          // post-ReLU; empty when the RCN is skipped
  BasicTensor<T> rcn_hidden;
  BasicForwardOutputs<T> outputs;
};

template <typename T>
ForwardTrace<T> forward_trace(const BasicNetworkParams<T>& params, const BasicTensor<T>& input,
                              const ForwardOptions& options = {});

template <typename T>
BasicForwardOutputs<T> forward(const BasicNetworkParams<T>& params, const BasicTensor<T>& input,
                               const ForwardOptions& options = {});

// Upstream gradients for each network output. Empty tensors are treated as zero.
template <typename T>
struct OutputGrads {
  BasicTensor<T> inter_hr;
  BasicTensor<T> boundary;
  BasicTensor<T> residual;
  BasicTensor<T> y;
};

// Which groups need gradients; untouched groups are left unmodified in `grads`.
struct GroupMask {
  bool shared = true;
  bool image = true;
  bool boundary = true;
  bool residual = true;
  bool fusion = true;

  bool contains(ParamGroup g) const noexcept;
  static GroupMask all() { return {}; }
  static GroupMask only(std::initializer_list<ParamGroup> groups);
};

// Accumulates parameter gradients into `grads` (same architecture as params).
template <typename T>
void backward(const BasicNetworkParams<T>& params, const ForwardTrace<T>& trace,
              const OutputGrads<T>& upstream, const GroupMask& mask, BasicNetworkParams<T>& grads);

// Smallest LR side accepted by forward.
inline constexpr int kMinInputSide = 9;

}  // namespace cmsr
