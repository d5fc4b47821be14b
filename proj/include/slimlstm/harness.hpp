#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slimlstm/cells.hpp"
#include "slimlstm/data.hpp"
#include "slimlstm/training.hpp"

namespace slim {

// ---------------------------------------------------------------------------
// Configuration

/// One experiment. Defaults are the reference IMDB network:
/// m=32, n=100, T=500, 5000 words, Adam at 1e-3, batch 32,
/// binary cross-entropy, sigmoid cell, 100 epochs.
struct ExperimentConfig {
  CellVariant variant = CellVariant::lstm;
  Activation activation = Activation::sigmoid;
  std::size_t hidden = 100;
  std::size_t embed = 32;
  std::size_t seq_len = 500;
  std::size_t vocab = 5000;
  double eta = 1e-3;
  double forget = kDefaultForget;
  std::size_t epochs = 100;
  std::size_t batch = 32;
  OptimizerKind optimizer = OptimizerKind::adam;
  LossKind loss = LossKind::binary_cross_entropy;
  std::uint64_t seed = 42;
  std::uint64_t data_seed = 1234;
  bool bidirectional = false;
  std::string data = "synth:keyword_count";
  std::string out = "runs/default";
  std::size_t samples = 2500;  // synthetic tasks only
  std::size_t classes = 2;
  std::string embeddings;  // optional frozen table, TSV data only

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Config keys, in serialization order. Each equals a CLI flag minus "--".
const std::vector<std::string>& config_keys();

/// Throws std::invalid_argument naming the key on a bad value.
void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const ExperimentConfig& cfg, std::string_view key);

/// Range checks; throws before any compute happens.
void validate(const ExperimentConfig& cfg);

/// "key = value" per line, every key, fixed order.
std::string serialize_config(const ExperimentConfig& cfg);

/// Applies "key = value" lines on top of base. '#' starts a comment.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base = {});

struct DataSource {
  bool synthetic = true;
  SynthTask task = SynthTask::keyword_count;
  std::string path;
};

/// "synth:<kind>" or "tsv:<path>".
DataSource parse_data_source(std::string_view spec);

/// Builds the dataset named by cfg.data (from cfg.data_seed).
Dataset load_dataset(const ExperimentConfig& cfg, Vocabulary* vocab_out = nullptr);

/// Draws a fresh network for cfg and data (from cfg.seed).
Network build_network(const ExperimentConfig& cfg, const Dataset& data, const Vocabulary* vocab = nullptr);

// ---------------------------------------------------------------------------
// Metrics and checkpoints

inline constexpr std::string_view kMetricsHeader = "epoch,train_loss,train_acc,test_loss,test_acc,seconds";
inline constexpr std::string_view kSummaryHeader =
    "variant,hidden,eta,forget,best_test_acc,best_epoch,final_train_acc";

std::string format_metrics_row(const MetricsRecord& r);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

/// Text header (variant, dims, activation, f, tensor names and shapes)
/// followed by the tensors as little-endian 64-bit floats in header order.
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Commands

struct TrainResult {
  std::vector<MetricsRecord> history;
  Network network;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Trains in memory, no files. on_epoch sees each record as it completes.
/// Stops early once test accuracy reaches stop_at_test_acc, if given.
TrainResult run_experiment(const ExperimentConfig& cfg, const EpochCallback& on_epoch = {},
                           std::optional<double> stop_at_test_acc = std::nullopt);

/// Writes <out>/config.txt, appends <out>/metrics.csv per epoch and saves
/// <out>/checkpoint.bin at the end.
TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct SweepSpec {
  ExperimentConfig base;
  std::vector<double> etas;
  std::vector<double> forgets;
  std::vector<std::size_t> hiddens;
  std::vector<CellVariant> variants;
};

struct SweepCell {
  std::size_t index = 0;
  ExperimentConfig config;
  double best_test_acc = 0;
  std::size_t best_epoch = 0;
  double final_train_acc = 0;
  std::optional<std::string> error;
};

/// Cross product in variant, hidden, forget, eta order (eta fastest).
/// Cell k gets seed base.seed + k and output directory <out>/cell_<k>.
std::vector<ExperimentConfig> expand_sweep(const SweepSpec& spec);

/// Runs every cell with up to `workers` threads and writes
/// <out>/summary.csv. A failing cell is reported, not fatal.
std::vector<SweepCell> cmd_sweep(const SweepSpec& spec, std::size_t workers = 1,
                                 std::ostream* log = nullptr);

std::string format_summary_row(const SweepCell& cell);

/// Pivot of best test accuracy: rows variant/hidden/forget, columns eta.
std::string format_sweep_table(const std::vector<SweepCell>& cells);

struct GradcheckOptions {
  std::size_t m = 4;
  std::size_t n = 5;
  std::size_t T = 4;
  std::size_t batch = 3;
  std::size_t vocab = 7;
  std::size_t seeds = 10;
  std::uint64_t base_seed = 1;
  std::vector<CellVariant> variants{CellVariant::srnn, CellVariant::lstm, CellVariant::lstm6,
                                    CellVariant::lstm_c6};
  std::vector<Activation> activations{Activation::sigmoid, Activation::tanh, Activation::relu};
  bool bidirectional = false;
  LossKind loss = LossKind::binary_cross_entropy;
  std::size_t classes = 3;  // categorical loss only
  double forget = kDefaultForget;
  double tolerance = 1e-6;
  double epsilon = kDefaultFdEpsilon;
  /// relu nets have many near-zero gradient entries whose relative error is
  /// dominated by roundoff at 1e-6; the kink margin (1e-4) still exceeds this.
  double relu_epsilon = 1e-5;
  /// Fault injection: applied to the analytic gradients before comparison.
  std::function<void(GradientSet&)> tamper;
};

struct GradcheckCase {
  CellVariant variant{};
  Activation activation{};
  std::uint64_t seed = 0;
  std::map<std::string, GroupError> groups;
  double max_rel_error = 0;
  std::string worst_group;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  bool passed = true;
};

/// BPTT against finite differences on small random networks. Dimension
/// caps: m, n <= 8 and T <= 5.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

/// One line per variant x activation with the worst group error.
std::string format_gradcheck(const GradcheckReport& report, double tolerance);

struct ParamReport {
  CellVariant variant{};
  std::size_t m = 0;
  std::size_t n = 0;
  bool bidirectional = false;
  std::uint64_t params = 0;
  std::uint64_t step_macs = 0;
};

ParamReport cmd_params(CellVariant variant, std::size_t m, std::size_t n, bool bidirectional);
std::string format_params(const ParamReport& r, bool json_lines);

struct BenchOptions {
  CellVariant variant = CellVariant::lstm;
  Activation activation = Activation::sigmoid;
  std::size_t m = 32;
  std::size_t n = 100;
  std::size_t T = 500;
  std::size_t reps = 5;
  std::size_t epoch_samples = 25000;  // sequences in one epoch-equivalent
  std::uint64_t seed = 42;
};

struct BenchResult {
  CellVariant variant{};
  std::vector<double> rep_seconds;  // forward + backward of one sequence
  double median_sequence_seconds = 0;
  double median_step_seconds = 0;
  double epoch_equivalent_seconds = 0;
  std::uint64_t step_macs = 0;
  double mac_speedup_vs_lstm = 0;  // lstm MACs / this variant's MACs
};

/// Single-threaded timing of forward + backward over a random sequence.
/// Data generation and setup are outside the timed region.
BenchResult cmd_bench(const BenchOptions& opts);
std::string format_bench(const BenchResult& r, const BenchOptions& opts, bool json_lines);

}  // namespace slim
