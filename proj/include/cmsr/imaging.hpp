#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmsr/tensor.hpp"

namespace cmsr {

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// Reads an 8-bit gray/gray+alpha/RGB/RGBA/palette PNG (alpha dropped). 16-bit
// files are rejected.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

// Planes in [0, 1] (8-bit code value / 255).
struct YCbCrPlanes {
  ImagePlane y;
  ImagePlane cb;
  ImagePlane cr;
};

// BT.601 studio swing: Y in [16, 235], chroma centered at 128. Gray images
// get Cb = Cr = 128/255.
YCbCrPlanes rgb_to_ycbcr(const Image8& image);
// Rounds and clamps to 8 bits; always produces 3 channels.
Image8 ycbcr_to_rgb(const YCbCrPlanes& planes);

// Clamps to [0, 1] and rounds to 8-bit gray.
Image8 plane_to_gray8(const ImagePlane& plane);
ImagePlane gray8_to_plane(const Image8& image);

// Keys cubic kernel.
double bicubic_weight(double x, double a = -0.5);

struct Ratio {
  int num = 1;
  int den = 1;
  double value() const noexcept { return static_cast<double>(num) / den; }
};

// Separable bicubic resampling with edge-clamped borders. Output pixel j
// samples source coordinate j * den / num (LR pixel i sits on HR pixel s*i).
// Downscaling stretches the kernel support by 1/factor and renormalizes.
ImagePlane resize_bicubic(const ImagePlane& plane, Ratio factor);

// Crops bottom/right so both sides are multiples of `scale`.
ImagePlane crop_to_multiple(const ImagePlane& plane, int scale);

ImagePlane make_lr(const ImagePlane& hr, int scale);

struct TrainingTriplet {
  ImagePlane lr;
  ImagePlane hr;
  std::vector<ImagePlane> boundaries;  // >= 1, same size as hr
};

// LR windows of `lr_patch` at `stride`, HR/boundary windows of scale*lr_patch
// at scale*stride. Returns nothing (and warns on stderr) when the image is
// smaller than the patch.
std::vector<TrainingTriplet> extract_patches(const TrainingTriplet& triplet, int scale,
                                             int lr_patch, int stride = 4);

// Dihedral transforms. Index 0 is identity; 1..3 rotate by 90/180/270
// degrees; 4 is a horizontal flip and 5..7 are the flip followed by rotations.
struct AugmentFlags {
  bool hflip = false;
  bool vflip = false;
  bool rot90 = false;
  bool rot180 = false;
  bool rot270 = false;
  bool dihedral8 = false;

  static AugmentFlags none() { return {}; }
  static AugmentFlags all8() {
    AugmentFlags f;
    f.dihedral8 = true;
    return f;
  }
  // Transform indices produced per input patch; always starts with identity.
  std::vector<int> variants() const;
};

ImagePlane dihedral(const ImagePlane& plane, int transform);

std::vector<TrainingTriplet> augment(const std::vector<TrainingTriplet>& patches,
                                     const AugmentFlags& flags);

// Thresholded central-difference gradient magnitude (90th percentile),
// dilated by one pixel. Values are exactly 0 or 1.
ImagePlane fallback_boundary(const ImagePlane& hr);

// Annotations normalized to [0, 1] (divided by their max when it exceeds 1)
// and kept separately; with no annotations, the fallback map of `hr`.
std::vector<ImagePlane> boundary_targets(std::span<const ImagePlane> annotations,
                                         const ImagePlane& hr);

struct ManifestEntry {
  std::filesystem::path hr_path;
  std::vector<std::filesystem::path> boundary_paths;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

// `hr_path[,boundary_path...]` per line, `#` comments, blank lines ignored.
// Relative paths resolve against the manifest's directory.
DatasetManifest parse_manifest(const std::filesystem::path& path);

// Paths named by the manifest that do not exist.
std::vector<std::filesystem::path> missing_files(const DatasetManifest& manifest);

// Luminance plane of a PNG file.
ImagePlane load_luminance(const std::filesystem::path& path);

// Boundary annotation: gray PNG scaled to [0, 1].
ImagePlane load_boundary(const std::filesystem::path& path);

// Builds the full-image triplet for one manifest entry: HR luminance cropped
// to a multiple of `scale`, its LR, and boundary targets (annotations or
// fallback).
TrainingTriplet load_triplet(const ManifestEntry& entry, int scale);

// Procedural piecewise-smooth test image (shapes, ramps, stripes) rendered
// with 4x4 supersampling; deterministic in `seed`. Values in [16/255, 235/255].
ImagePlane synthetic_image(int height, int width, std::uint64_t seed);

}  // namespace cmsr
