#include "fedseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedseg/image.hpp"
#include "fedseg/io.hpp"

namespace fedseg {

using nlohmann::json;

std::vector<ManifestRecord> DatasetManifest::split(
    const std::string& name) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(r);
  }
  return out;
}

DatasetManifest load_manifest(const std::string& path) {
  if (!path_exists(path)) throw_io("manifest not found: " + path);
  const std::string text = read_file(path);
  DatasetManifest manifest;
  manifest.base_dir = dirname_of(path);
  std::set<std::string> seen;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  std::vector<std::string> missing;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw_validation("manifest line " + std::to_string(line_no) +
                       " is not valid JSON: " + e.what());
    }
    ManifestRecord rec;
    try {
      rec.image_path = j.at("image_path").get<std::string>();
      rec.mask_path = j.at("mask_path").get<std::string>();
      rec.split = j.at("split").get<std::string>();
    } catch (const json::exception& e) {
      throw_validation("manifest line " + std::to_string(line_no) +
                       " is missing a field: " + e.what());
    }
    if (rec.split != "train" && rec.split != "test") {
      throw_validation("manifest line " + std::to_string(line_no) +
                       " has unknown split \"" + rec.split +
                       "\" (expected train or test)");
    }
    if (!seen.insert(rec.image_path).second) {
      throw_validation("manifest line " + std::to_string(line_no) +
                       " duplicates id " + rec.image_path);
    }
    for (const std::string& p : {rec.image_path, rec.mask_path}) {
      if (!path_exists(join_path(manifest.base_dir, p))) {
        missing.push_back("line " + std::to_string(line_no) + ": " + p);
      }
    }
    manifest.records.push_back(std::move(rec));
  }
  if (!missing.empty()) {
    std::string msg = "manifest references missing files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw_validation(msg);
  }
  return manifest;
}

ImageSample load_sample(const DatasetManifest& manifest,
                        const ManifestRecord& record, int target_h,
                        int target_w, double rescale) {
  ImageSample s;
  s.id = record.image_path;
  const ImageU8 img =
      decode_image_file(join_path(manifest.base_dir, record.image_path));
  const ImageU8 msk =
      decode_image_file(join_path(manifest.base_dir, record.mask_path));
  Tensor image = image_to_float(img, rescale);
  if (image.dim(0) != target_h || image.dim(1) != target_w) {
    image = resize_bilinear(image, target_h, target_w);
  }
  Tensor mask = image_to_float(msk, 1.0 / 255.0);
  if (mask.dim(0) != target_h || mask.dim(1) != target_w) {
    mask = resize_nearest(mask, target_h, target_w);
  }
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    mask[i] = mask[i] >= 0.5f ? 1.0f : 0.0f;
  }
  s.image = std::move(image);
  s.mask = std::move(mask);
  return s;
}

ChannelStats compute_channel_stats(const std::vector<ImageSample>& samples) {
  if (samples.empty()) {
    throw_validation("channel stats need at least one sample");
  }
  ChannelStats stats;
  std::array<double, 3> sum{0, 0, 0}, sum_sq{0, 0, 0};
  std::int64_t count = 0;
  for (const auto& s : samples) {
    const Tensor& im = s.image;
    for (std::int64_t i = 0; i < im.size(); ++i) {
      const double v = static_cast<double>(im[i]);
      sum[static_cast<std::size_t>(i % 3)] += v;
      sum_sq[static_cast<std::size_t>(i % 3)] += v * v;
    }
    count += im.size() / 3;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / static_cast<double>(count);
    const double var = sum_sq[c] / static_cast<double>(count) - mean * mean;
    stats.mean[c] = mean;
    stats.stddev[c] = std::sqrt(var > 0.0 ? var : 0.0);
  }
  return stats;
}

void save_stats(const ChannelStats& stats, const std::string& path) {
  json j;
  j["mean"] = stats.mean;
  j["stddev"] = stats.stddev;
  atomic_write_file(path, j.dump(2) + "\n");
}

ChannelStats load_stats(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw_validation("stats file " + path + " is not valid JSON: " + e.what());
  }
  ChannelStats stats;
  try {
    stats.mean = j.at("mean").get<std::array<double, 3>>();
    stats.stddev = j.at("stddev").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw_validation("stats file " + path + " is malformed: " + e.what());
  }
  return stats;
}

void AugmentConfig::validate() const {
  if (width_shift_range < 0.0 || width_shift_range > 0.5 ||
      height_shift_range < 0.0 || height_shift_range > 0.5) {
    throw_validation("augment: shift ranges must be in [0, 0.5]");
  }
  if (rescale <= 0.0) throw_validation("augment: rescale must be positive");
  if (copies_per_original < 0) {
    throw_validation("augment: copies_per_original must be >= 0");
  }
}

ImageSample shift_sample(const ImageSample& sample, int dx, int dy) {
  const std::int64_t h = sample.image.dim(0), w = sample.image.dim(1),
                     c = sample.image.dim(2);
  ImageSample out;
  out.id = sample.id;
  out.image = Tensor({h, w, c});
  out.mask = Tensor({h, w, c});
  for (std::int64_t y = 0; y < h; ++y) {
    const std::int64_t sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      for (std::int64_t ci = 0; ci < c; ++ci) {
        out.image[(y * w + x) * c + ci] = sample.image[(sy * w + sx) * c + ci];
        out.mask[(y * w + x) * c + ci] = sample.mask[(sy * w + sx) * c + ci];
      }
    }
  }
  return out;
}

ImageSample augment(const ImageSample& sample, const AugmentConfig& config,
                    const ChannelStats* stats, Rng& rng) {
  config.validate();
  if ((config.featurewise_center || config.featurewise_std_normalization) &&
      stats == nullptr) {
    throw_validation(
        "augment: feature-wise normalization requested but dataset stats are "
        "not available");
  }
  const std::int64_t h = sample.image.dim(0), w = sample.image.dim(1);
  const int max_dx =
      static_cast<int>(config.width_shift_range * static_cast<double>(w) + 1e-9);
  const int max_dy = static_cast<int>(config.height_shift_range *
                                          static_cast<double>(h) + 1e-9);
  const int dx = max_dx > 0
                     ? static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(max_dx) + 1)) - max_dx
                     : 0;
  const int dy = max_dy > 0
                     ? static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(max_dy) + 1)) - max_dy
                     : 0;
  ImageSample out = (dx != 0 || dy != 0) ? shift_sample(sample, dx, dy)
                                         : sample;
  if (config.featurewise_center) {
    for (std::int64_t i = 0; i < out.image.size(); ++i) {
      out.image[i] -= static_cast<float>(stats->mean[static_cast<std::size_t>(i % 3)]);
    }
  }
  if (config.featurewise_std_normalization) {
    std::array<double, 3> div{};
    for (std::size_t c = 0; c < 3; ++c) div[c] = stats->stddev[c] + 1e-6;
    for (std::int64_t i = 0; i < out.image.size(); ++i) {
      out.image[i] = static_cast<float>(out.image[i] /
                                        div[static_cast<std::size_t>(i % 3)]);
    }
  }
  return out;
}

namespace {

// Smooth value-noise background in a muted color range.
void paint_background(Tensor& image, Rng& rng) {
  const std::int64_t h = image.dim(0), w = image.dim(1);
  constexpr int kGrid = 5;
  float nodes[kGrid][kGrid];
  for (auto& row : nodes) {
    for (auto& v : row) v = static_cast<float>(rng.uniform());
  }
  std::array<float, 3> base{};
  for (auto& b : base) b = static_cast<float>(0.10 + 0.40 * rng.uniform());
  for (std::int64_t y = 0; y < h; ++y) {
    const double gy = static_cast<double>(y) / static_cast<double>(h - 1) *
                      (kGrid - 1);
    const int y0 = std::min(static_cast<int>(gy), kGrid - 2);
    const double fy = gy - y0;
    for (std::int64_t x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) / static_cast<double>(w - 1) *
                        (kGrid - 1);
      const int x0 = std::min(static_cast<int>(gx), kGrid - 2);
      const double fx = gx - x0;
      const double n =
          nodes[y0][x0] * (1 - fy) * (1 - fx) + nodes[y0][x0 + 1] * (1 - fy) * fx +
          nodes[y0 + 1][x0] * fy * (1 - fx) + nodes[y0 + 1][x0 + 1] * fy * fx;
      const double speckle = 0.06 * (rng.uniform() - 0.5);
      for (std::int64_t c = 0; c < 3; ++c) {
        double v = base[static_cast<std::size_t>(c)] * (0.7 + 0.6 * n) + speckle;
        v = std::clamp(v, 0.0, 1.0);
        image[(y * w + x) * 3 + c] = static_cast<float>(v);
      }
    }
  }
}

struct Glyph {
  double x_lo, x_hi, y_lo, y_hi;
};

}  // namespace

ImageSample synthesize_sample(int h, int w, const PlateSpec& spec, Rng& rng) {
  if (spec.plate_w < 1 || spec.plate_h < 1 || spec.plate_w > w ||
      spec.plate_h > h) {
    throw_validation("synthetic plate " + std::to_string(spec.plate_w) + "x" +
                     std::to_string(spec.plate_h) +
                     " does not fit image " + std::to_string(w) + "x" +
                     std::to_string(h));
  }
  ImageSample s;
  s.image = Tensor({h, w, 3});
  s.mask = Tensor({h, w, 3});
  paint_background(s.image, rng);

  const double cx = spec.x0 + spec.plate_w * 0.5;
  const double cy = spec.y0 + spec.plate_h * 0.5;
  const double hw = spec.plate_w * 0.5;
  const double hh = spec.plate_h * 0.5;
  const double cos_t = std::cos(spec.angle);
  const double sin_t = std::sin(spec.angle);

  const float plate_base = static_cast<float>(0.78 + 0.14 * rng.uniform());
  const int n_glyphs = 3 + static_cast<int>(rng.below(5));
  std::vector<Glyph> glyphs;
  for (int g = 0; g < n_glyphs; ++g) {
    const double gx = (-0.40 + 0.80 * rng.uniform()) * spec.plate_w;
    const double gw = (0.025 + 0.045 * rng.uniform()) * spec.plate_w;
    glyphs.push_back({gx - gw * 0.5, gx + gw * 0.5, -0.32 * spec.plate_h,
                      0.32 * spec.plate_h});
  }
  const float glyph_shade = static_cast<float>(0.05 + 0.15 * rng.uniform());

  // Scan only the rotated bounding box.
  const double bx = hw * std::abs(cos_t) + hh * std::abs(sin_t);
  const double by = hw * std::abs(sin_t) + hh * std::abs(cos_t);
  const std::int64_t y_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy - by - 1));
  const std::int64_t y_hi = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(cy + by + 1));
  const std::int64_t x_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx - bx - 1));
  const std::int64_t x_hi = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(cx + bx + 1));
  for (std::int64_t y = y_lo; y <= y_hi; ++y) {
    for (std::int64_t x = x_lo; x <= x_hi; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx;
      const double py = static_cast<double>(y) + 0.5 - cy;
      // Rotate the pixel back into the plate frame.
      const double ux = cos_t * px + sin_t * py;
      const double uy = -sin_t * px + cos_t * py;
      if (std::abs(ux) > hw || std::abs(uy) > hh) continue;
      float shade = plate_base;
      for (const Glyph& g : glyphs) {
        if (ux >= g.x_lo && ux <= g.x_hi && uy >= g.y_lo && uy <= g.y_hi) {
          shade = glyph_shade;
          break;
        }
      }
      for (std::int64_t c = 0; c < 3; ++c) {
        s.image[(y * static_cast<std::int64_t>(w) + x) * 3 + c] = shade;
        s.mask[(y * static_cast<std::int64_t>(w) + x) * 3 + c] = 1.0f;
      }
    }
  }
  return s;
}

std::vector<ImageSample> generate_synthetic(int count, int h, int w,
                                            Rng& rng) {
  if (count <= 0) {
    throw_validation("synthetic count must be positive, got " +
                     std::to_string(count));
  }
  if (h < 16 || w < 16) {
    throw_validation("synthetic images must be at least 16x16");
  }
  std::vector<ImageSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    PlateSpec spec;
    // Area fraction in [0.05, 0.25] keeps the pixelized plate between 2%
    // and 30% of the image for any rotation.
    const double area_frac = 0.05 + 0.20 * rng.uniform();
    const double aspect = 1.5 + 2.5 * rng.uniform();
    const double target = area_frac * static_cast<double>(h) * w;
    int pw = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    int ph = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    pw = std::clamp(pw, 3, static_cast<int>(0.85 * w));
    ph = std::clamp(ph, 3, static_cast<int>(0.85 * h));
    double angle = (rng.uniform() - 0.5) * (3.14159265358979323846 / 3.0);
    // Shrink until the rotated box fits with a one-pixel margin.
    for (;;) {
      const double bx = 0.5 * pw * std::abs(std::cos(angle)) +
                        0.5 * ph * std::abs(std::sin(angle));
      const double by = 0.5 * pw * std::abs(std::sin(angle)) +
                        0.5 * ph * std::abs(std::cos(angle));
      const int x0_min = static_cast<int>(std::ceil(bx - 0.5 * pw)) + 1;
      const int x0_max = static_cast<int>(std::floor(w - bx - 0.5 * pw)) - 1;
      const int y0_min = static_cast<int>(std::ceil(by - 0.5 * ph)) + 1;
      const int y0_max = static_cast<int>(std::floor(h - by - 0.5 * ph)) - 1;
      if (x0_max >= x0_min && y0_max >= y0_min) {
        spec.x0 = x0_min + static_cast<int>(rng.below(
                               static_cast<std::uint64_t>(x0_max - x0_min + 1)));
        spec.y0 = y0_min + static_cast<int>(rng.below(
                               static_cast<std::uint64_t>(y0_max - y0_min + 1)));
        break;
      }
      pw = std::max(3, static_cast<int>(pw * 0.9));
      ph = std::max(3, static_cast<int>(ph * 0.9));
      angle *= 0.8;
    }
    spec.plate_w = pw;
    spec.plate_h = ph;
    spec.angle = angle;
    ImageSample s = synthesize_sample(h, w, spec, rng);
    s.id = strfmt("synth_%05d", i);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint8_t> binarize_mask(const Tensor& mask, double threshold) {
  const std::int64_t h = mask.dim(0), w = mask.dim(1), c = mask.dim(2);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h * w), 0);
  for (std::int64_t p = 0; p < h * w; ++p) {
    double m = 0.0;
    for (std::int64_t ci = 0; ci < c; ++ci)
      m += static_cast<double>(mask[p * c + ci]);
    out[static_cast<std::size_t>(p)] =
        (m / static_cast<double>(c) >= threshold) ? 1 : 0;
  }
  return out;
}

namespace {

struct Component {
  std::int64_t area = 0;
  std::int64_t min_x = 0, max_x = 0, min_y = 0, max_y = 0;
};

// Largest 4-connected component of a binary grid; zero area when empty.
Component largest_component(const std::vector<std::uint8_t>& grid,
                            std::int64_t h, std::int64_t w) {
  std::vector<std::uint8_t> visited(grid.size(), 0);
  Component best;
  std::deque<std::int64_t> queue;
  for (std::int64_t start = 0; start < h * w; ++start) {
    if (!grid[static_cast<std::size_t>(start)] ||
        visited[static_cast<std::size_t>(start)]) {
      continue;
    }
    Component cur;
    cur.min_x = cur.max_x = start % w;
    cur.min_y = cur.max_y = start / w;
    visited[static_cast<std::size_t>(start)] = 1;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::int64_t p = queue.front();
      queue.pop_front();
      const std::int64_t x = p % w, y = p / w;
      ++cur.area;
      cur.min_x = std::min(cur.min_x, x);
      cur.max_x = std::max(cur.max_x, x);
      cur.min_y = std::min(cur.min_y, y);
      cur.max_y = std::max(cur.max_y, y);
      const std::int64_t nbrs[4] = {p - w, p + w, p - 1, p + 1};
      const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
      for (int k = 0; k < 4; ++k) {
        if (!ok[k]) continue;
        const std::int64_t q = nbrs[k];
        if (grid[static_cast<std::size_t>(q)] &&
            !visited[static_cast<std::size_t>(q)]) {
          visited[static_cast<std::size_t>(q)] = 1;
          queue.push_back(q);
        }
      }
    }
    if (cur.area > best.area) best = cur;
  }
  return best;
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (const char ch : id) {
    out.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
  }
  return out;
}

}  // namespace

std::vector<CropResult> export_crops(const std::vector<ImageSample>& samples,
                                     const std::vector<Tensor>& predicted_masks,
                                     const std::string& out_dir) {
  if (samples.size() != predicted_masks.size()) {
    throw_validation("export_crops: " + std::to_string(samples.size()) +
                     " samples vs " + std::to_string(predicted_masks.size()) +
                     " masks");
  }
  ensure_directory(out_dir);
  std::vector<CropResult> results;
  std::string report = "id,crop_path,area\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageSample& s = samples[i];
    const Tensor& m = predicted_masks[i];
    check_same_shape(s.image, m, "export_crops");
    const std::int64_t h = m.dim(0), w = m.dim(1);
    const auto grid = binarize_mask(m, 0.5);
    const Component comp = largest_component(grid, h, w);
    CropResult r;
    r.id = s.id;
    r.area = comp.area;
    if (comp.area > 0) {
      const std::int64_t ch = comp.max_y - comp.min_y + 1;
      const std::int64_t cw = comp.max_x - comp.min_x + 1;
      Tensor crop({ch, cw, 3});
      for (std::int64_t y = 0; y < ch; ++y) {
        for (std::int64_t x = 0; x < cw; ++x) {
          for (std::int64_t c = 0; c < 3; ++c) {
            crop[(y * cw + x) * 3 + c] =
                s.image[((comp.min_y + y) * w + comp.min_x + x) * 3 + c];
          }
        }
      }
      r.path = join_path(out_dir, sanitize_id(s.id) + "_crop.png");
      encode_png(r.path, float_to_image(crop));
    }
    report += r.id + "," + r.path + "," + std::to_string(r.area) + "\n";
    results.push_back(std::move(r));
  }
  atomic_write_file(join_path(out_dir, "crops.csv"), report);
  return results;
}

}  // namespace fedseg
