#include "korigins/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "korigins/error.hpp"
#include "korigins/rng.hpp"

namespace fs = std::filesystem;

namespace korigins {

namespace {

constexpr double kMaxIntensity = 65535.0;

void check_class(const ClassSpec& c, const std::string& field) {
  if (!(c.mu >= 0.0 && c.mu <= kMaxIntensity)) throw ConfigError(field + ".mu must lie in [0, 65535]");
  if (!(c.sigma >= 0.0) || !std::isfinite(c.sigma)) throw ConfigError(field + ".sigma must be >= 0");
}

}  // namespace

std::vector<ClassSpec> DatasetSpec::classes() const {
  std::vector<ClassSpec> out{background};
  out.insert(out.end(), targets.begin(), targets.end());
  return out;
}

double expected_coverage(const DatasetSpec& spec) {
  double mean_area = 0.0;
  for (std::size_t s = spec.side_min; s <= spec.side_max; ++s) mean_area += static_cast<double>(s * s);
  mean_area /= static_cast<double>(spec.side_max - spec.side_min + 1);
  const double fraction = mean_area / static_cast<double>(spec.height * spec.width);
  return 1.0 - std::pow(1.0 - std::min(fraction, 1.0), static_cast<double>(spec.squares_per_image));
}

void validate(const DatasetSpec& spec) {
  if (spec.image_count == 0) throw ConfigError("image_count must be positive");
  if (spec.height == 0 || spec.width == 0) throw ConfigError("height and width must be positive");
  check_class(spec.background, "background");
  if (spec.targets.empty() || spec.targets.size() > 2) throw ConfigError("targets must hold 1 or 2 classes");
  for (std::size_t i = 0; i < spec.targets.size(); ++i) {
    check_class(spec.targets[i], "targets[" + std::to_string(i) + "]");
  }
  if (spec.side_min == 0 || spec.side_min > spec.side_max) throw ConfigError("side_range must satisfy 1 <= min <= max");
  if (spec.side_max >= std::min(spec.height, spec.width)) throw ConfigError("side_range max must be below the image side");
  if (spec.squares_per_image == 0) throw ConfigError("squares_per_image must be positive");
  if (expected_coverage(spec) > 0.9) throw ConfigError("squares_per_image leaves less than 10% expected background");
}

std::size_t squares_for_side(std::size_t side, std::size_t height, std::size_t width) {
  if (side == 0) throw ArgumentError("square side must be positive");
  const auto n = static_cast<std::size_t>(std::floor(0.25 * static_cast<double>(height * width) /
                                                     static_cast<double>(side * side)));
  return std::clamp<std::size_t>(n, 5, 50);
}

LabeledImage generate_image(const DatasetSpec& spec, std::size_t index) {
  Rng rng(spec.seed, index);
  LabeledImage img;
  img.height = spec.height;
  img.width = spec.width;
  img.labels.assign(spec.height * spec.width, 0);
  img.pixels.resize(spec.height * spec.width);

  for (std::size_t s = 0; s < spec.squares_per_image; ++s) {
    const auto side = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.side_min),
                                                                static_cast<std::int64_t>(spec.side_max)));
    const auto top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.height - side)));
    const auto left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.width - side)));
    const auto label = static_cast<std::uint8_t>(spec.targets.size() == 1 ? 1 : 1 + s % 2);
    for (std::size_t y = top; y < top + side; ++y) {
      std::fill_n(img.labels.begin() + static_cast<std::ptrdiff_t>(y * spec.width + left), side, label);
    }
  }
  const auto classes = spec.classes();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const ClassSpec& c = classes[img.labels[i]];
    const double v = std::round(c.mu + gaussian_draw(rng, 0.0, c.sigma));
    img.pixels[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, kMaxIntensity));
  }
  return img;
}

std::vector<LabeledImage> generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  std::vector<LabeledImage> images;
  images.reserve(spec.image_count);
  for (std::size_t i = 0; i < spec.image_count; ++i) images.push_back(generate_image(spec, i));
  return images;
}

Tensor image_tensor(const LabeledImage& image) {
  Tensor t({1, image.height, image.width});
  std::copy(image.pixels.begin(), image.pixels.end(), t.raw());
  return t;
}

// --- PGM ---------------------------------------------------------------------------------

std::string encode_pgm16(std::size_t width, std::size_t height, std::span<const std::uint16_t> samples) {
  if (samples.size() != width * height) throw FormatError("pgm16: sample count does not match dimensions");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
  out.reserve(out.size() + samples.size() * 2);
  for (auto v : samples) {
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

std::string encode_pgm8(std::size_t width, std::size_t height, std::span<const std::uint8_t> samples) {
  if (samples.size() != width * height) throw FormatError("pgm8: sample count does not match dimensions");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(samples.data()), samples.size());
  return out;
}

namespace {

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void write_pgm16(const std::string& path, std::size_t width, std::size_t height,
                 std::span<const std::uint16_t> samples) {
  write_bytes(path, encode_pgm16(width, height, samples));
}

void write_label_pgm8(const std::string& path, std::size_t width, std::size_t height,
                      std::span<const std::uint8_t> samples) {
  write_bytes(path, encode_pgm8(width, height, samples));
}

PgmImage decode_pgm(const std::string& bytes, const std::string& context) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> FormatError { return FormatError(context + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&](const char* what) -> std::uint64_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw fail(std::string("malformed header (") + what + ")");
    }
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::uint64_t>(bytes[pos++] - '0');
      if (v > (1ULL << 32)) throw fail(std::string("header value too large (") + what + ")");
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("not a binary PGM (P5)");
  pos = 2;
  PgmImage img;
  img.width = read_number("width");
  img.height = read_number("height");
  const std::uint64_t maxval = read_number("maxval");
  if (img.width == 0 || img.height == 0) throw fail("zero image dimension");
  if (maxval == 0 || maxval > 65535) throw fail("maxval out of range");
  img.maxval = static_cast<std::uint32_t>(maxval);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw fail("missing whitespace after maxval");
  }
  ++pos;
  const std::size_t count = img.width * img.height;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  if (bytes.size() - pos < count * bytes_per) throw fail("truncated pixel data");
  img.samples.resize(count);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint16_t v = bytes_per == 2 ? static_cast<std::uint16_t>((data[2 * i] << 8) | data[2 * i + 1])
                                           : static_cast<std::uint16_t>(data[i]);
    if (v > maxval) throw fail("sample " + std::to_string(i) + " exceeds maxval");
    img.samples[i] = v;
  }
  return img;
}

PgmImage read_pgm(const std::string& path) { return decode_pgm(read_bytes(path), path); }

PgmImage read_pgm16(const std::string& path) { return read_pgm(path); }

std::vector<std::uint8_t> read_label_pgm8(const std::string& path, std::size_t* width, std::size_t* height) {
  PgmImage img = read_pgm(path);
  if (img.maxval > 255) throw FormatError(path + ": label image must have maxval <= 255");
  if (width) *width = img.width;
  if (height) *height = img.height;
  return std::vector<std::uint8_t>(img.samples.begin(), img.samples.end());
}

// --- manifests ---------------------------------------------------------------------------------

namespace {

nlohmann::json class_json(const ClassSpec& c) { return {{"mu", c.mu}, {"sigma", c.sigma}}; }

const nlohmann::json& require(const nlohmann::json& j, const std::string& name, const std::string& prefix = "") {
  if (!j.is_object() || !j.contains(name)) throw FormatError("missing field '" + prefix + name + "'");
  return j.at(name);
}

template <typename T>
T number(const nlohmann::json& j, const std::string& name, const std::string& prefix = "") {
  const auto& v = require(j, name, prefix);
  if (!v.is_number()) throw FormatError("field '" + prefix + name + "' must be a number");
  if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw FormatError("field '" + prefix + name + "' must be a non-negative integer");
  }
  return v.get<T>();
}

ClassSpec class_from(const nlohmann::json& j, const std::string& prefix) {
  return {number<double>(j, "mu", prefix), number<double>(j, "sigma", prefix)};
}

}  // namespace

nlohmann::json dataset_spec_to_json(const DatasetSpec& spec) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : spec.targets) targets.push_back(class_json(t));
  return {{"image_count", spec.image_count},
          {"height", spec.height},
          {"width", spec.width},
          {"background", class_json(spec.background)},
          {"targets", std::move(targets)},
          {"side_range", {spec.side_min, spec.side_max}},
          {"squares_per_image", spec.squares_per_image},
          {"seed", spec.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  DatasetSpec spec;
  spec.image_count = number<std::size_t>(j, "image_count");
  spec.height = number<std::size_t>(j, "height");
  spec.width = number<std::size_t>(j, "width");
  spec.background = class_from(require(j, "background"), "background.");
  const auto& targets = require(j, "targets");
  if (!targets.is_array()) throw FormatError("field 'targets' must be an array");
  spec.targets.clear();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    spec.targets.push_back(class_from(targets[i], "targets[" + std::to_string(i) + "]."));
  }
  const auto& range = require(j, "side_range");
  if (!range.is_array() || range.size() != 2 || !range[0].is_number_unsigned() || !range[1].is_number_unsigned()) {
    throw FormatError("field 'side_range' must be [min, max]");
  }
  spec.side_min = range[0].get<std::size_t>();
  spec.side_max = range[1].get<std::size_t>();
  spec.squares_per_image = number<std::size_t>(j, "squares_per_image");
  spec.seed = number<std::uint64_t>(j, "seed");
  try {
    validate(spec);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid field: ") + e.what());
  }
  return spec;
}

DatasetSpec load_dataset_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset spec '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset spec '" + path + "': " + e.what());
  }
  return dataset_spec_from_json(j);
}

void write_manifest(const std::string& path, const DatasetSpec& spec, const std::vector<ManifestEntry>& images) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : images) list.push_back({{"pixels", e.pixels}, {"labels", e.labels}});
  const nlohmann::json j{{"format", "korigins-dataset"},
                         {"version", 1},
                         {"spec", dataset_spec_to_json(spec)},
                         {"seed", spec.seed},
                         {"images", std::move(list)}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest '" + path + "'");
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
  Manifest m;
  try {
    if (require(j, "format") != "korigins-dataset") throw FormatError("field 'format' is not korigins-dataset");
    if (number<int>(j, "version") != 1) throw FormatError("field 'version' must be 1");
    m.spec = dataset_spec_from_json(require(j, "spec"));
    if (number<std::uint64_t>(j, "seed") != m.spec.seed) throw FormatError("field 'seed' disagrees with spec.seed");
    const auto& images = require(j, "images");
    if (!images.is_array()) throw FormatError("field 'images' must be an array");
    for (std::size_t i = 0; i < images.size(); ++i) {
      const std::string prefix = "images[" + std::to_string(i) + "].";
      const auto& px = require(images[i], "pixels", prefix);
      const auto& lb = require(images[i], "labels", prefix);
      if (!px.is_string() || !lb.is_string()) throw FormatError("field '" + prefix + "pixels/labels' must be strings");
      m.images.push_back({px.get<std::string>(), lb.get<std::string>()});
    }
    if (m.images.size() != m.spec.image_count) {
      throw FormatError("field 'images' lists " + std::to_string(m.images.size()) + " entries for image_count " +
                        std::to_string(m.spec.image_count));
    }
  } catch (const FormatError& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
  m.directory = fs::path(path).parent_path().string();
  return m;
}

Manifest generate_to_disk(const DatasetSpec& spec, const std::string& manifest_path) {
  validate(spec);
  const fs::path manifest(manifest_path);
  const fs::path dir = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
  const std::string sub = manifest.stem().string() + "_images";
  fs::create_directories(dir / sub);

  Manifest m;
  m.spec = spec;
  m.directory = dir.string();
  for (std::size_t i = 0; i < spec.image_count; ++i) {
    const LabeledImage img = generate_image(spec, i);
    char name[32];
    std::snprintf(name, sizeof name, "%05zu", i);
    ManifestEntry e{sub + "/img_" + name + ".pgm", sub + "/lbl_" + name + ".pgm"};
    write_pgm16((dir / e.pixels).string(), img.width, img.height, img.pixels);
    write_label_pgm8((dir / e.labels).string(), img.width, img.height, img.labels);
    m.images.push_back(std::move(e));
  }
  write_manifest(manifest_path, spec, m.images);
  return m;
}

std::vector<LabeledImage> load_images(const Manifest& manifest) {
  std::vector<LabeledImage> out;
  out.reserve(manifest.images.size());
  const std::size_t classes = manifest.spec.class_count();
  for (const auto& e : manifest.images) {
    const fs::path base(manifest.directory);
    const std::string px_path = (base / e.pixels).string();
    const std::string lb_path = (base / e.labels).string();
    PgmImage px = read_pgm(px_path);
    std::size_t w = 0, h = 0;
    auto labels = read_label_pgm8(lb_path, &w, &h);
    if (w != px.width || h != px.height) throw FormatError(lb_path + ": label size differs from " + px_path);
    if (px.width != manifest.spec.width || px.height != manifest.spec.height) {
      throw FormatError(px_path + ": size differs from manifest spec");
    }
    for (auto l : labels) {
      if (l >= classes) throw FormatError(lb_path + ": label " + std::to_string(l) + " >= class count");
    }
    LabeledImage img;
    img.width = px.width;
    img.height = px.height;
    img.pixels = std::move(px.samples);
    img.labels = std::move(labels);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace korigins
