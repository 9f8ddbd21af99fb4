#pragma once

#include <vector>

#include "cmsr/tensor.hpp"

namespace cmsr {

enum class Padding { same, valid };

// How the transposed convolution treats LR positions outside the input.
// `replicate` reads the nearest edge pixel (matches edge-clamped bicubic
// resampling); `zero` treats them as absent.
enum class Border { replicate, zero };

template <typename T>
struct BasicConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 1;
  Padding padding = Padding::same;
  BasicTensor<T> kernels;  // [out, in, k, k]
  std::vector<T> bias;     // [out]; empty means the layer has no bias

  BasicConvSpec() = default;
  BasicConvSpec(int in, int out, int k, Padding pad = Padding::same, bool with_bias = true);

  bool has_bias() const noexcept { return !bias.empty(); }
  void validate() const;

  template <typename U>
  BasicConvSpec<U> cast() const;
};

template <typename T>
struct BasicDeconvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 2;
  int stride = 1;
  Border border = Border::replicate;
  BasicTensor<T> kernels;  // [in, out, n, n]
  std::vector<T> bias;     // [out]

  BasicDeconvSpec() = default;
  BasicDeconvSpec(int in, int out, int n, int s, Border b = Border::replicate);

  // Taps cropped from the top/left of the raw stride-s scatter; tap `crop()`
  // of every kernel lands exactly on its LR pixel's anchor in the HR grid.
  int crop() const noexcept { return (kernel_size - 1) / 2; }
  void validate() const;

  template <typename U>
  BasicDeconvSpec<U> cast() const;
};

using ConvSpec = BasicConvSpec<float>;
using DeconvSpec = BasicDeconvSpec<float>;

template <typename T>
struct LayerGrads {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> kernels;
  std::vector<T> bias;
};

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicConvSpec<T>& spec);

// Gradients of sum(grad_out * conv2d(input, spec)). Skipping the input
// gradient saves work for the first layer and frozen branches.
template <typename T>
LayerGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicConvSpec<T>& spec,
                              const BasicTensor<T>& grad_out, bool need_input_grad = true);

template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const BasicDeconvSpec<T>& spec);

template <typename T>
LayerGrads<T> deconv2d_backward(const BasicTensor<T>& input, const BasicDeconvSpec<T>& spec,
                                const BasicTensor<T>& grad_out, bool need_input_grad = true);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

template <typename T>
void relu_inplace(BasicTensor<T>& t);

// Gate rule: passes grad_out where input > 0, zero elsewhere (including 0).
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out);

}  // namespace cmsr
