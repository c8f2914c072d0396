#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "korigins/synthgen.hpp"
#include "korigins/train.hpp"

namespace korigins {

enum class HdProblem { detect, tracer };
enum class SquareSize { small, large };

HdProblem hd_problem_from_string(const std::string& s);
SquareSize square_size_from_string(const std::string& s);
std::string to_string(HdProblem p);
std::string to_string(SquareSize s);

inline const std::vector<double> kRflRatios{0.3, 0.6, 0.95, 1.3, 2.0, 3.0};
inline const std::vector<double> kDeltaMus{0, 500, 1000, 2000, 4000};
inline const std::vector<double> kDeltaSigmas{0, 430, 1100, 2000, 4250};

struct SweepOptions {
  /// Training images per cell; validation uses the same count. 100 is the
  /// desk-scale default, the reference grids used 400.
  std::size_t image_count = 100;
  std::size_t height = 200;
  std::size_t width = 200;
  std::size_t epochs = 10;
  std::size_t batch_size = 3;
  double lr_korigins = 100.0;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  std::size_t eval_every = 1;
  /// Subsets to run; empty means the full axis.
  std::vector<std::string> networks;
  std::vector<double> columns;
  std::vector<double> rows;
  std::function<void(const std::string&)> log;
};

nlohmann::json to_json(const SweepOptions& options);

/// Everything needed to train and score one cell.
struct CellPlan {
  std::string network;
  std::string dataset_key;
  DatasetSpec train_spec;
  DatasetSpec val_spec;
  TrainConfig train;
};

nlohmann::json to_json(const CellPlan& plan);

CellPlan rfl_cell_plan(const std::string& network, double ratio, bool noise, const SweepOptions& options);
CellPlan hd_cell_plan(HdProblem problem, SquareSize size, const std::string& network, double delta_mu,
                      double delta_sigma, const SweepOptions& options);

struct CellOutcome {
  double macc = 0.0;
  TrainHistory history;
  LabeledImage snapshot_input;
  std::vector<std::uint8_t> snapshot_prediction;
};

/// Trains the plan's network, saves it to `checkpoint_path` and scores the
/// reloaded checkpoint on the validation set.
CellOutcome run_cell(const CellPlan& plan, const std::string& checkpoint_path, const EpochCallback& on_epoch = {});

/// Rebuilds the validation set from the plan's recorded seed and scores the
/// saved checkpoint.
double reevaluate_cell(const CellPlan& plan, const std::string& checkpoint_path);

struct CellRecord {
  std::string grid;
  std::size_t row = 0;
  std::size_t col = 0;
  CellPlan plan;
  double macc = 0.0;
  std::size_t epochs = 0;
  std::vector<EpochRecord> history;
  std::string dir;  // relative to the sweep output directory
  LabeledImage snapshot_input;
  std::vector<std::uint8_t> snapshot_prediction;
};

struct Grid {
  std::string name;
  std::string row_axis;
  std::string col_axis;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  /// NaN marks cells that were not run.
  std::vector<std::vector<double>> macc;
};

struct SweepResult {
  std::string kind;
  nlohmann::json config;
  std::string config_hash;
  std::vector<Grid> grids;
  std::vector<CellRecord> cells;
};

/// Rows are networks, columns L/RFL ratios.
SweepResult run_rfl_sweep(bool noise, const SweepOptions& options, const std::string& out_dir);
/// One grid per network; rows delta sigma, columns delta mu.
SweepResult run_hd_sweep(HdProblem problem, SquareSize size, const SweepOptions& options,
                         const std::string& out_dir);

/// Writes <grid>.csv, <grid>_heatmap.pgm, sweep.json and per-cell
/// specs and snapshots under out_dir.
void export_results(const SweepResult& result, const std::string& out_dir);

nlohmann::json to_json(const SweepResult& result);
/// Reads sweep.json back; snapshots are not stored there and stay empty.
SweepResult read_sweep(const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);
std::string format_axis_value(double v);

}  // namespace korigins
