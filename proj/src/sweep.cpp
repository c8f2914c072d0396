#include "korigins/sweep.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "korigins/error.hpp"
#include "korigins/netbuild.hpp"

namespace korigins {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;
constexpr std::uint64_t kInitStream = 0x696e6974ULL;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision precision_from_name(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw FormatError("unknown precision '" + s + "'");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

TrainConfig base_train_config(const SweepOptions& options, double lr_conv, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = options.epochs;
  tc.batch_size = options.batch_size;
  tc.lr_conv = lr_conv;
  tc.lr_korigins = options.lr_korigins;
  tc.seed = seed;
  tc.precision = options.precision;
  tc.eval_every = options.eval_every;
  return tc;
}

CellPlan make_plan(const std::string& network, const std::string& dataset_key, DatasetSpec spec,
                   const SweepOptions& options, double lr_conv) {
  CellPlan plan;
  plan.network = network;
  plan.dataset_key = dataset_key;
  spec.image_count = options.image_count;
  spec.height = options.height;
  spec.width = options.width;
  spec.seed = mix_seed(options.seed, fnv1a64(dataset_key));
  validate(spec);
  plan.train_spec = spec;
  plan.val_spec = spec;
  plan.val_spec.seed = mix_seed(spec.seed, kValidationStream);
  plan.train = base_train_config(options, lr_conv, mix_seed(spec.seed, fnv1a64(network)));
  return plan;
}

NetworkSpec plan_network(const CellPlan& plan) {
  return build_named(plan.network, plan.train_spec.class_count(), plan.train_spec.classes());
}

template <typename T>
std::vector<T> select_axis(const std::vector<T>& full, const std::vector<T>& wanted, const char* what) {
  if (wanted.empty()) return full;
  for (const auto& w : wanted) {
    if (std::find(full.begin(), full.end(), w) == full.end()) {
      std::ostringstream os;
      os << what << " value " << w << " is not on the sweep axis";
      throw ConfigError(os.str());
    }
  }
  return wanted;
}

std::vector<std::string> lower_names(const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (auto n : names) {
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
    out.push_back(n == "color" ? "colour" : n);
  }
  return out;
}

std::size_t index_of(const std::vector<double>& axis, double v) {
  return static_cast<std::size_t>(std::find(axis.begin(), axis.end(), v) - axis.begin());
}

void log_line(const SweepOptions& options, const std::string& line) {
  if (options.log) options.log(line);
}

CellRecord run_and_record(const CellPlan& plan, const std::string& grid, std::size_t row, std::size_t col,
                          const fs::path& out_dir, const SweepOptions& options) {
  CellRecord rec;
  rec.grid = grid;
  rec.row = row;
  rec.col = col;
  rec.plan = plan;
  rec.dir = "cells/" + grid + "/" + plan.network + "_r" + std::to_string(row) + "_c" + std::to_string(col);
  ensure_dir(out_dir / rec.dir);
  log_line(options, "cell " + rec.dir + " (" + plan.dataset_key + ")");
  CellOutcome outcome = run_cell(plan, (out_dir / rec.dir / "model.korg").string(), [&](const EpochRecord& e) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "  epoch %zu loss %.6f val_macc %.4f", e.epoch, e.mean_loss, e.val_macc);
    log_line(options, buf);
  });
  rec.macc = outcome.macc;
  rec.epochs = outcome.history.epochs.size();
  rec.history = outcome.history.epochs;
  rec.snapshot_input = std::move(outcome.snapshot_input);
  rec.snapshot_prediction = std::move(outcome.snapshot_prediction);
  char buf[96];
  std::snprintf(buf, sizeof buf, "  macc %.4f", rec.macc);
  log_line(options, buf);
  return rec;
}

std::vector<std::vector<double>> nan_grid(std::size_t rows, std::size_t cols) {
  return std::vector<std::vector<double>>(rows, std::vector<double>(cols, std::numeric_limits<double>::quiet_NaN()));
}

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

double number_from_json(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size}, {"lr_conv", c.lr_conv},
          {"lr_korigins", c.lr_korigins}, {"beta1", c.beta1},    {"beta2", c.beta2},
          {"epsilon", c.epsilon},   {"seed", c.seed},             {"shuffle", c.shuffle},
          {"precision", precision_name(c.precision)}, {"eval_every", c.eval_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr_conv = j.at("lr_conv").get<double>();
  c.lr_korigins = j.at("lr_korigins").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.shuffle = j.at("shuffle").get<bool>();
  c.precision = precision_from_name(j.at("precision").get<std::string>());
  c.eval_every = j.at("eval_every").get<std::size_t>();
  return c;
}

void finish(SweepResult& result, const std::string& kind, const SweepOptions& options, nlohmann::json extra) {
  result.kind = kind;
  nlohmann::json config = to_json(options);
  for (auto& [k, v] : extra.items()) config[k] = v;
  result.config = config;
  result.config_hash = hex64(fnv1a64(config.dump()));
}

}  // namespace

HdProblem hd_problem_from_string(const std::string& s) {
  if (s == "detect" || s == "object-detection") return HdProblem::detect;
  if (s == "tracer") return HdProblem::tracer;
  throw ConfigError("unknown problem '" + s + "' (expected detect or tracer)");
}

SquareSize square_size_from_string(const std::string& s) {
  if (s == "small") return SquareSize::small;
  if (s == "large") return SquareSize::large;
  throw ConfigError("unknown size '" + s + "' (expected small or large)");
}

std::string to_string(HdProblem p) { return p == HdProblem::detect ? "detect" : "tracer"; }
std::string to_string(SquareSize s) { return s == SquareSize::small ? "small" : "large"; }

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_axis_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

nlohmann::json to_json(const SweepOptions& o) {
  return {{"image_count", o.image_count},
          {"height", o.height},
          {"width", o.width},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"lr_korigins", o.lr_korigins},
          {"seed", o.seed},
          {"precision", precision_name(o.precision)},
          {"eval_every", o.eval_every},
          {"networks", o.networks},
          {"columns", o.columns},
          {"rows", o.rows}};
}

nlohmann::json to_json(const CellPlan& plan) {
  return {{"network", plan.network},
          {"dataset_key", plan.dataset_key},
          {"train_spec", dataset_spec_to_json(plan.train_spec)},
          {"val_spec", dataset_spec_to_json(plan.val_spec)},
          {"train_config", train_config_json(plan.train)}};
}

CellPlan rfl_cell_plan(const std::string& network, double ratio, bool noise, const SweepOptions& options) {
  const NetworkSpec probe = build_named(network, 2, {{20000.0, 0.0}, {25000.0, 0.0}});
  const std::size_t rfl = rfl_of_network(probe);
  const auto side = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(rfl)));
  if (side < 1) throw ConfigError("ratio " + format_axis_value(ratio) + " gives an empty square side");
  const double sigma = noise ? 2000.0 : 0.0;
  DatasetSpec spec;
  spec.background = {20000.0, sigma};
  spec.targets = {{25000.0, sigma}};
  spec.side_min = spec.side_max = side;
  spec.squares_per_image = squares_for_side(side, options.height, options.width);
  const std::string key = "rfl/noise=" + std::string(noise ? "on" : "off") + "/rfl=" + std::to_string(rfl) +
                          "/ratio=" + format_axis_value(ratio);
  return make_plan(network, key, spec, options, 1e-3);
}

CellPlan hd_cell_plan(HdProblem problem, SquareSize size, const std::string& network, double delta_mu,
                      double delta_sigma, const SweepOptions& options) {
  DatasetSpec spec;
  if (problem == HdProblem::detect) {
    spec.background = {20000.0, 1000.0};
    spec.targets = {{20000.0 + delta_mu, 1000.0 + delta_sigma}};
  } else {
    spec.background = {16500.0, 900.0};
    spec.targets = {{20000.0, 1000.0}, {20000.0 + delta_mu, 1000.0 + delta_sigma}};
  }
  if (size == SquareSize::small) {
    spec.side_min = 6;
    spec.side_max = 12;
    spec.squares_per_image = 50;
  } else {
    spec.side_min = 20;
    spec.side_max = 30;
    spec.squares_per_image = 25;
  }
  const std::string key = "hd/" + to_string(problem) + "/" + to_string(size) + "/dmu=" +
                          format_axis_value(delta_mu) + "/dsigma=" + format_axis_value(delta_sigma);
  return make_plan(network, key, spec, options, 1e-4);
}

CellOutcome run_cell(const CellPlan& plan, const std::string& checkpoint_path, const EpochCallback& on_epoch) {
  const NetworkSpec spec = plan_network(plan);
  Rng init(plan.train.seed, kInitStream);
  Network net(spec, init);
  const auto train_set = generate_dataset(plan.train_spec);
  const auto val_set = generate_dataset(plan.val_spec);

  CellOutcome outcome;
  outcome.history = train(net, train_set, val_set, plan.train, on_epoch);
  save_checkpoint(net, checkpoint_path);

  Network restored = load_checkpoint(checkpoint_path, spec);
  restored.set_precision(plan.train.precision);
  outcome.macc = evaluate(restored, val_set);
  outcome.snapshot_input = val_set.front();
  outcome.snapshot_prediction = predict(restored, val_set.front());
  return outcome;
}

double reevaluate_cell(const CellPlan& plan, const std::string& checkpoint_path) {
  Network net = load_checkpoint(checkpoint_path, plan_network(plan));
  net.set_precision(plan.train.precision);
  return evaluate(net, generate_dataset(plan.val_spec));
}

SweepResult run_rfl_sweep(bool noise, const SweepOptions& options, const std::string& out_dir) {
  static const std::vector<std::string> all{"rfl8", "rfl18", "rfl38", "krfl8", "krfl18", "krfl38"};
  const auto networks = select_axis(all, lower_names(options.networks), "network");
  const auto ratios = select_axis(kRflRatios, options.columns, "ratio");
  if (!options.rows.empty()) throw ConfigError("the RFL sweep has no row axis to select");

  SweepResult result;
  Grid grid;
  grid.name = std::string("rfl_noise_") + (noise ? "on" : "off");
  grid.row_axis = "network";
  grid.col_axis = "ratio";
  for (const auto& n : all) {
    auto label = n;
    std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::toupper(c); });
    grid.row_labels.push_back(label);
  }
  for (double r : kRflRatios) grid.col_labels.push_back(format_axis_value(r));
  grid.macc = nan_grid(all.size(), kRflRatios.size());

  ensure_dir(out_dir);
  for (const auto& net : networks) {
    const std::size_t row = static_cast<std::size_t>(std::find(all.begin(), all.end(), net) - all.begin());
    for (double ratio : ratios) {
      const std::size_t col = index_of(kRflRatios, ratio);
      CellRecord rec = run_and_record(rfl_cell_plan(net, ratio, noise, options), grid.name, row, col, out_dir, options);
      grid.macc[row][col] = rec.macc;
      result.cells.push_back(std::move(rec));
    }
  }
  result.grids.push_back(std::move(grid));
  finish(result, "rfl", options, {{"noise", noise}});
  return result;
}

SweepResult run_hd_sweep(HdProblem problem, SquareSize size, const SweepOptions& options, const std::string& out_dir) {
  static const std::vector<std::string> all{"rfl14", "krfl14"};
  const auto networks = select_axis(all, lower_names(options.networks), "network");
  const auto mus = select_axis(kDeltaMus, options.columns, "delta_mu");
  const auto sigmas = select_axis(kDeltaSigmas, options.rows, "delta_sigma");

  SweepResult result;
  ensure_dir(out_dir);
  for (const auto& net : networks) {
    Grid grid;
    grid.name = to_string(problem) + "_" + to_string(size) + "_" + net;
    grid.row_axis = "delta_sigma";
    grid.col_axis = "delta_mu";
    for (double s : kDeltaSigmas) grid.row_labels.push_back(format_axis_value(s));
    for (double m : kDeltaMus) grid.col_labels.push_back(format_axis_value(m));
    grid.macc = nan_grid(kDeltaSigmas.size(), kDeltaMus.size());
    for (double ds : sigmas) {
      for (double dm : mus) {
        const std::size_t row = index_of(kDeltaSigmas, ds), col = index_of(kDeltaMus, dm);
        CellRecord rec =
            run_and_record(hd_cell_plan(problem, size, net, dm, ds, options), grid.name, row, col, out_dir, options);
        grid.macc[row][col] = rec.macc;
        result.cells.push_back(std::move(rec));
      }
    }
    result.grids.push_back(std::move(grid));
  }
  finish(result, "hd", options, {{"problem", to_string(problem)}, {"size", to_string(size)}});
  return result;
}

nlohmann::json to_json(const SweepResult& result) {
  nlohmann::json grids = nlohmann::json::array();
  for (const auto& g : result.grids) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : g.macc) {
      nlohmann::json row = nlohmann::json::array();
      for (double v : r) row.push_back(number_or_null(v));
      rows.push_back(row);
    }
    grids.push_back({{"name", g.name},
                     {"row_axis", g.row_axis},
                     {"col_axis", g.col_axis},
                     {"row_labels", g.row_labels},
                     {"col_labels", g.col_labels},
                     {"macc", rows}});
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : result.cells) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : c.history) {
      history.push_back({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"val_macc", number_or_null(e.val_macc)}});
    }
    cells.push_back({{"grid", c.grid},
                     {"row", c.row},
                     {"col", c.col},
                     {"network", c.plan.network},
                     {"dataset_key", c.plan.dataset_key},
                     {"macc", c.macc},
                     {"epochs", c.epochs},
                     {"seed", c.plan.train.seed},
                     {"train_spec", dataset_spec_to_json(c.plan.train_spec)},
                     {"val_spec", dataset_spec_to_json(c.plan.val_spec)},
                     {"train_config", train_config_json(c.plan.train)},
                     {"dir", c.dir},
                     {"manifest", c.dir + "/val_spec.json"},
                     {"checkpoint", c.dir + "/model.korg"},
                     {"history", history}});
  }
  return {{"format", "korigins-sweep"}, {"version", 1},       {"kind", result.kind}, {"config", result.config},
          {"config_hash", result.config_hash}, {"grids", grids}, {"cells", cells}};
}

SweepResult read_sweep(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  SweepResult r;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != "korigins-sweep") throw FormatError(path + ": not a sweep file");
    r.kind = j.at("kind").get<std::string>();
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& g : j.at("grids")) {
      Grid grid;
      grid.name = g.at("name").get<std::string>();
      grid.row_axis = g.at("row_axis").get<std::string>();
      grid.col_axis = g.at("col_axis").get<std::string>();
      grid.row_labels = g.at("row_labels").get<std::vector<std::string>>();
      grid.col_labels = g.at("col_labels").get<std::vector<std::string>>();
      for (const auto& row : g.at("macc")) {
        std::vector<double> values;
        for (const auto& v : row) values.push_back(number_from_json(v));
        grid.macc.push_back(std::move(values));
      }
      r.grids.push_back(std::move(grid));
    }
    for (const auto& c : j.at("cells")) {
      CellRecord rec;
      rec.grid = c.at("grid").get<std::string>();
      rec.row = c.at("row").get<std::size_t>();
      rec.col = c.at("col").get<std::size_t>();
      rec.plan.network = c.at("network").get<std::string>();
      rec.plan.dataset_key = c.at("dataset_key").get<std::string>();
      rec.plan.train_spec = dataset_spec_from_json(c.at("train_spec"));
      rec.plan.val_spec = dataset_spec_from_json(c.at("val_spec"));
      rec.plan.train = train_config_from_json(c.at("train_config"));
      rec.macc = c.at("macc").get<double>();
      rec.epochs = c.at("epochs").get<std::size_t>();
      rec.dir = c.at("dir").get<std::string>();
      for (const auto& e : c.at("history")) {
        rec.history.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(),
                               number_from_json(e.at("val_macc"))});
      }
      r.cells.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return r;
}

void export_results(const SweepResult& result, const std::string& out_dir) {
  const fs::path root(out_dir);
  ensure_dir(root);
  for (const auto& g : result.grids) {
    std::string csv = g.row_axis == "network" ? "network" : g.row_axis + "/" + g.col_axis;
    for (const auto& c : g.col_labels) csv += "," + c;
    csv += "\n";
    std::vector<std::uint16_t> heat;
    for (std::size_t r = 0; r < g.macc.size(); ++r) {
      csv += g.row_labels.at(r);
      for (double v : g.macc[r]) {
        csv += ",";
        if (!std::isnan(v)) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.4f", v);
          csv += buf;
        }
        heat.push_back(std::isnan(v) ? 0 : static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)));
      }
      csv += "\n";
    }
    write_text(root / (g.name + ".csv"), csv);
    write_pgm16((root / (g.name + "_heatmap.pgm")).string(), g.col_labels.size(), g.macc.size(), heat);
  }
  for (const auto& c : result.cells) {
    const fs::path dir = root / c.dir;
    ensure_dir(dir);
    write_text(dir / "train_spec.json", dataset_spec_to_json(c.plan.train_spec).dump(2) + "\n");
    write_text(dir / "val_spec.json", dataset_spec_to_json(c.plan.val_spec).dump(2) + "\n");
    write_text(dir / "network.json", to_json(plan_network(c.plan)).dump(2) + "\n");
    if (!c.snapshot_prediction.empty()) {
      const auto& img = c.snapshot_input;
      write_pgm16((dir / "input.pgm").string(), img.width, img.height, img.pixels);
      write_label_pgm8((dir / "truth.pgm").string(), img.width, img.height, img.labels);
      write_label_pgm8((dir / "prediction.pgm").string(), img.width, img.height, c.snapshot_prediction);
    }
  }
  write_text(root / "sweep.json", to_json(result).dump(2) + "\n");
}

}  // namespace korigins
