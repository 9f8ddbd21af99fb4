#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmsr/imaging.hpp"
#include "cmsr/network.hpp"
#include "cmsr/training.hpp"

namespace cmsr::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kNumericFailure = 3 };

// Everything a command needs. Text form is `key = value` lines grouped under
// `[section]` headers; `#` starts a comment.
struct RunConfig {
  NetworkConfig network;
  double hidden_gain = kDefaultHiddenGain;
  TrainConfig train;
  LossConfig loss;

  std::filesystem::path manifest;
  std::filesystem::path archive;
  std::filesystem::path validation;
  int lr_patch = 16;
  int stride = 4;
  std::string augment = "none";  // none | dihedral8

  bool shave = true;
  std::filesystem::path out_dir = "out";

  std::string to_text() const;
  // Throws InvalidArgument on unknown sections/keys or unparsable values.
  void apply_text(const std::string& text, const std::string& origin);
};

RunConfig load_config(const std::filesystem::path& path);

// Worker threads: hardware concurrency, capped by CMSR_THREADS when set.
int resolve_threads();

// Luminance prediction for one LR plane; the default runs the model.
using Predictor = std::function<ImagePlane(const ImagePlane& lr, const ImagePlane& hr)>;

struct Scores {
  double psnr = 0.0;
  double ssim = 0.0;
  double epsnr = 0.0;
  bool has_epsnr = false;  // false when the image has no boundary pixels
};

struct EvalRow {
  std::string image;
  Scores model;
  Scores bicubic;
  std::size_t edge_pixels = 0;
};

// Scores every manifest image (manifest order). Predictions are clamped to
// [0, 1] as they would be when written out; `shave` removes `scale` pixels.
std::vector<EvalRow> evaluate(const DatasetManifest& manifest, int scale, const Predictor& predict,
                              bool shave, int threads);

// `image,psnr,ssim,epsnr,edge_pixels,bicubic_psnr,bicubic_ssim,bicubic_epsnr`
// rows, then a `mean` row. Infinite scores print as "inf" and are left out
// of the means; a trailing comment counts them.
std::string eval_csv(const std::vector<EvalRow>& rows);

// Raw deconv kernel values of one interpolator (`interp1` or `interp2`) as
// `in,out,y,x,value` CSV.
std::string kernel_csv(const DeconvSpec& spec);

// |v| / max|v| scaled to 255.
Image8 kernel_image(const Tensor& kernels, int in, int out);

// Parses and runs one command; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmsr::cli
