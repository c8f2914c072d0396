#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "korigins/class_spec.hpp"
#include "korigins/tensor.hpp"

namespace korigins {

/// Synthetic square-segmentation dataset description.
struct DatasetSpec {
  std::size_t image_count = 400;
  std::size_t height = 200;
  std::size_t width = 200;
  ClassSpec background{20000.0, 0.0};
  /// One or two target classes (labels 1 and 2).
  std::vector<ClassSpec> targets{{25000.0, 0.0}};
  std::size_t side_min = 6;
  std::size_t side_max = 12;
  std::size_t squares_per_image = 50;
  std::uint64_t seed = 0;

  std::size_t class_count() const { return 1 + targets.size(); }
  /// Background first, then targets in label order.
  std::vector<ClassSpec> classes() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct LabeledImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> pixels;
  std::vector<std::uint8_t> labels;

  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

/// Throws ConfigError naming the offending field.
void validate(const DatasetSpec& spec);

/// Fraction of the image expected to be covered by at least one square,
/// treating placements as independent: 1 - (1 - E[side^2]/area)^n.
double expected_coverage(const DatasetSpec& spec);

/// Square count that keeps roughly a quarter of the frame covered for a
/// fixed side length: floor(0.25 * H * W / L^2) clamped to [5, 50].
std::size_t squares_for_side(std::size_t side, std::size_t height = 200, std::size_t width = 200);

LabeledImage generate_image(const DatasetSpec& spec, std::size_t index);
std::vector<LabeledImage> generate_dataset(const DatasetSpec& spec);

/// [1,H,W] tensor of raw 16-bit intensities.
Tensor image_tensor(const LabeledImage& image);

// --- PGM ------------------------------------------------------------------------------

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t maxval = 0;
  std::vector<std::uint16_t> samples;
};

/// Binary P5 with maxval 65535, two big-endian bytes per sample.
void write_pgm16(const std::string& path, std::size_t width, std::size_t height,
                 std::span<const std::uint16_t> samples);
/// Binary P5 with maxval 255, one byte per sample.
void write_label_pgm8(const std::string& path, std::size_t width, std::size_t height,
                      std::span<const std::uint8_t> samples);
std::string encode_pgm16(std::size_t width, std::size_t height, std::span<const std::uint16_t> samples);
std::string encode_pgm8(std::size_t width, std::size_t height, std::span<const std::uint8_t> samples);

/// Reads any binary P5 (1- or 2-byte samples).
PgmImage read_pgm(const std::string& path);
PgmImage decode_pgm(const std::string& bytes, const std::string& context = "pgm");
PgmImage read_pgm16(const std::string& path);
/// Requires maxval <= 255.
std::vector<std::uint8_t> read_label_pgm8(const std::string& path, std::size_t* width = nullptr,
                                          std::size_t* height = nullptr);

// --- manifests ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string pixels;  // relative to the manifest directory
  std::string labels;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  DatasetSpec spec;
  std::vector<ManifestEntry> images;
  std::string directory;  // directory containing the manifest file
};

nlohmann::json dataset_spec_to_json(const DatasetSpec& spec);
/// Validates every field; FormatError names the missing or out-of-range field.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
DatasetSpec load_dataset_spec(const std::string& path);

void write_manifest(const std::string& path, const DatasetSpec& spec, const std::vector<ManifestEntry>& images);
Manifest read_manifest(const std::string& path);

/// Generates the dataset and writes PGM files next to `manifest_path`.
Manifest generate_to_disk(const DatasetSpec& spec, const std::string& manifest_path);
/// Loads every image listed in a manifest.
std::vector<LabeledImage> load_images(const Manifest& manifest);

}  // namespace korigins
