#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedseg/rng.hpp"
#include "fedseg/tensor.hpp"

namespace fedseg {

// Image in [0,1], mask in {0,1}; both HxWx3 with shared extents.
struct ImageSample {
  Tensor image;
  Tensor mask;
  std::string id;
};

struct ManifestRecord {
  std::string image_path;
  std::string mask_path;
  std::string split;  // "train" | "test"
};

// JSON-lines manifest; relative paths resolve against the manifest's
// directory.
struct DatasetManifest {
  std::string base_dir;
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(const std::string& name) const;
};

DatasetManifest load_manifest(const std::string& path);

ImageSample load_sample(const DatasetManifest& manifest,
                        const ManifestRecord& record, int target_h,
                        int target_w, double rescale = 1.0 / 255.0);

struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

// Per-channel pixel statistics; computed on the training split only, before
// any augmentation randomness.
ChannelStats compute_channel_stats(const std::vector<ImageSample>& samples);
void save_stats(const ChannelStats& stats, const std::string& path);
ChannelStats load_stats(const std::string& path);

struct AugmentConfig {
  double rescale = 1.0 / 255.0;
  double width_shift_range = 0.1;   // fraction of width, in [0, 0.5]
  double height_shift_range = 0.1;  // fraction of height, in [0, 0.5]
  bool featurewise_center = true;
  bool featurewise_std_normalization = true;
  // Augmented copies added per original when expanding a training set.
  int copies_per_original = 1;
  std::uint64_t seed = 0;  // 0 = derive from the run seed

  void validate() const;
};

// Shifts image and mask by the same integer offsets (fill 0), then applies
// feature-wise centering / std normalization to the image only. Requires
// stats when a feature-wise flag is set.
ImageSample augment(const ImageSample& sample, const AugmentConfig& config,
                    const ChannelStats* stats, Rng& rng);

// The deterministic geometric core of augment(); exposed for paired-shift
// checks.
ImageSample shift_sample(const ImageSample& sample, int dx, int dy);

// Textured background plus a rotated bright plate with dark glyph strokes;
// the mask is 1 exactly on the plate quadrilateral.
struct PlateSpec {
  int x0 = 0;       // integer anchor of the unrotated plate
  int y0 = 0;
  int plate_w = 0;
  int plate_h = 0;
  double angle = 0.0;  // radians
};

ImageSample synthesize_sample(int h, int w, const PlateSpec& spec, Rng& rng);
std::vector<ImageSample> generate_synthetic(int count, int h, int w, Rng& rng);

struct CropResult {
  std::string id;
  std::string path;  // empty when the mask had no positive pixels
  std::int64_t area = 0;
};

// Crops the tight bounding box of the largest 4-connected positive
// component of each predicted mask; writes PNGs plus a crops.csv report.
std::vector<CropResult> export_crops(const std::vector<ImageSample>& samples,
                                     const std::vector<Tensor>& predicted_masks,
                                     const std::string& out_dir);

// Pixel is positive when its channel mean clears the threshold.
std::vector<std::uint8_t> binarize_mask(const Tensor& mask, double threshold);

}  // namespace fedseg
