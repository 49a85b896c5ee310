#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "celmnav/archgen.hpp"
#include "celmnav/dataset.hpp"
#include "celmnav/elm.hpp"
#include "celmnav/gd.hpp"
#include "celmnav/navmetrics.hpp"

namespace celmnav {

enum class SelectOn { Test, Val };
std::string_view to_string(SelectOn s);
SelectOn parse_select_on(std::string_view text);

/// One CELM (spec, seed) run. Failed runs keep ok = false and the error text.
struct RunRecord {
  std::string dataset_id;
  ArchSpec spec;
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double c_star = 0;
  double val_eps_n = 0;
  double test_eps_n = 0;
  double seconds = 0;
  int solve_count = 0;
  std::string error;

  std::string key() const;  ///< dataset / spec key / seed
};

using ProgressFn = std::function<void(const std::string&)>;

struct CelmSearchOptions {
  std::filesystem::path run_dir;  ///< records.csv and manifest.jsonl live here; empty disables persistence
  SelectOn select_on = SelectOn::Test;
  std::uint64_t master_seed = 0;
  ProgressFn progress;
};

struct CelmSearchResult {
  RunRecord best;
  std::vector<RunRecord> records;  ///< grid order
  int reused = 0;                  ///< runs taken from an existing records.csv
};

/// Trains every (spec, seed) of the grid, skipping runs already recorded in
/// run_dir/records.csv, and selects the lowest mean eps_n. Failures are
/// recorded and the search continues; throws only if every run failed.
CelmSearchResult run_celm_search(const SplitSet& data, const std::vector<SeededSpec>& grid,
                                 const CelmSearchOptions& options);

/// Lowest score among successful runs; equal scores go to the
/// lexicographically earlier spec, then the lower replicate.
RunRecord select_best(const std::vector<RunRecord>& records, SelectOn select_on);

void write_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);
std::vector<RunRecord> read_records_csv(const std::filesystem::path& path);

/// Trained CELM for one (spec, seed): kernels, head and normalizer.
struct CelmModel {
  ArchSpec spec;
  std::uint64_t seed = 0;
  ModelParams params;
  CelmResult fit;
};
CelmModel fit_celm_model(const SplitSet& data, const ArchSpec& spec, std::uint64_t seed);

// ------------------------------------------------------------------ CNN ---

struct CnnGrid {
  std::vector<int> batch_sizes;
  std::vector<double> learning_rates;
  int runs = 3;
  int epochs = 300;

  static CnnGrid paper();
  /// One batch size, two learning rates, one run, 30 epochs.
  static CnnGrid desk();
  std::size_t size() const { return batch_sizes.size() * learning_rates.size() * static_cast<std::size_t>(runs); }
};

struct CnnRunRecord {
  std::string dataset_id;
  std::string spec_key;
  int batch_size = 0;
  double learning_rate = 0;
  int run = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  int best_epoch = 0;
  double val_loss = 0;
  double seconds = 0;
  std::string error;
};

struct BootstrapResult {
  Checkpoint best;
  CnnRunRecord best_record;
  std::vector<CnnRunRecord> runs;
};

/// Trains the CNN grid on the selected architecture; the best run is the one
/// with the lowest validation loss. Diverged runs are recorded, not fatal.
BootstrapResult bootstrap_cnn(const SplitSet& data, const ArchSpec& best_spec, const CnnGrid& grid,
                              std::uint64_t master_seed, const std::filesystem::path& run_dir = {},
                              const ProgressFn& progress = {});

// -------------------------------------------------------------- hybrids ---

struct CnnBest {
  LabelStrategy strategy = LabelStrategy::DeltaRange;
  Checkpoint checkpoint;
  double score = 0;  ///< mean test eps_n of the CNN, compared within a frame group
};

/// Encoder source of each hybrid: HCELM uses the dataset's own CNN, HCELM3
/// the best CNN of the dataset's frame group (ties to the smaller dataset id).
struct HybridPlan {
  std::map<std::string, std::string> hcelm_source;
  std::map<std::string, std::string> hcelm3_source;
  std::map<FrameGroup, std::string> group_best;
};
HybridPlan plan_hybrids(const std::map<std::string, CnnBest>& bests);

struct HybridModel {
  ArchSpec spec;
  ModelParams params;
  CelmResult celm;
  std::string encoder_source;
  std::uint64_t encoder_hash = 0;
};

/// Trains the HCELM and HCELM3 heads of every dataset in `data`.
std::map<std::pair<std::string, MethodTag>, HybridModel> build_hybrids(
    const std::map<std::string, CnnBest>& bests, const std::map<std::string, const SplitSet*>& data,
    std::span<const double> c_grid);

}  // namespace celmnav
