#include "celmnav/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "celmnav/error.hpp"
#include "celmnav/rng.hpp"

namespace celmnav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRecordsHeader =
    "dataset,spec_key,depth,distribution,activation,pooling,n_outputs,input_side,replicate,seed,ok,c_star,"
    "val_eps_n,test_eps_n,seconds,solve_count,error";

std::string clean(std::string text) {
  std::replace(text.begin(), text.end(), ',', ';');
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

void write_record_row(std::ostream& out, const RunRecord& r) {
  const ArchSpec& s = r.spec;
  out << r.dataset_id << ',' << s.key() << ',' << s.depth << ',' << to_string(s.distribution) << ','
      << to_string(s.activation) << ',' << to_string(s.pooling) << ',' << s.n_outputs << ',' << s.input_side << ','
      << r.replicate << ',' << r.seed << ',' << (r.ok ? 1 : 0) << ',' << r.c_star << ',' << r.val_eps_n << ','
      << r.test_eps_n << ',' << r.seconds << ',' << r.solve_count << ',' << clean(r.error) << '\n';
}

json record_json(const RunRecord& r) {
  return {{"type", "celm_run"},    {"dataset", r.dataset_id},  {"spec", json::parse(spec_to_json(r.spec))},
          {"replicate", r.replicate}, {"seed", r.seed},       {"ok", r.ok},
          {"c_star", r.c_star},    {"val_eps_n", r.val_eps_n}, {"test_eps_n", r.test_eps_n},
          {"seconds", r.seconds},  {"solve_count", r.solve_count}, {"error", r.error}};
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << line << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t text_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string_view to_string(SelectOn s) { return s == SelectOn::Test ? "test" : "val"; }

SelectOn parse_select_on(std::string_view text) {
  if (text == "test") return SelectOn::Test;
  if (text == "val") return SelectOn::Val;
  throw Error("select-on must be 'test' or 'val', got '" + std::string(text) + "'");
}

std::string RunRecord::key() const { return dataset_id + "/" + spec.key() + "/" + std::to_string(seed); }

void write_records_csv(const std::vector<RunRecord>& records, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17) << kRecordsHeader << '\n';
  for (const auto& r : records) write_record_row(out, r);
}

std::vector<RunRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kRecordsHeader) throw IoError("unexpected header in " + path.string());
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = split_line(line);
    if (c.size() == 16) c.emplace_back();
    if (c.size() != 17) throw IoError("malformed record: " + line);
    RunRecord r;
    r.dataset_id = c[0];
    r.spec.depth = std::stoi(c[2]);
    r.spec.distribution = parse_distribution(c[3]);
    r.spec.activation = parse_activation(c[4]);
    r.spec.pooling = parse_pooling(c[5]);
    r.spec.n_outputs = std::stoi(c[6]);
    r.spec.input_side = std::stoi(c[7]);
    r.replicate = std::stoi(c[8]);
    r.seed = std::stoull(c[9]);
    r.ok = c[10] == "1";
    r.c_star = std::stod(c[11]);
    r.val_eps_n = std::stod(c[12]);
    r.test_eps_n = std::stod(c[13]);
    r.seconds = std::stod(c[14]);
    r.solve_count = std::stoi(c[15]);
    r.error = c[16];
    if (r.spec.key() != c[1]) throw IoError("spec key mismatch in record: " + line);
    out.push_back(std::move(r));
  }
  return out;
}

RunRecord select_best(const std::vector<RunRecord>& records, SelectOn select_on) {
  const RunRecord* best = nullptr;
  const auto score = [select_on](const RunRecord& r) { return select_on == SelectOn::Test ? r.test_eps_n : r.val_eps_n; };
  for (const auto& r : records) {
    if (!r.ok || !std::isfinite(score(r))) continue;
    if (!best) {
      best = &r;
      continue;
    }
    const double a = score(r), b = score(*best);
    if (a < b || (a == b && (spec_less(r.spec, best->spec) ||
                             (same_architecture(r.spec, best->spec) && r.replicate < best->replicate))))
      best = &r;
  }
  if (!best) throw Error("no successful run to select from");
  return *best;
}

CelmModel fit_celm_model(const SplitSet& data, const ArchSpec& spec, std::uint64_t seed) {
  CelmModel m;
  m.spec = spec;
  m.seed = seed;
  m.params = init_kernels(spec, seed);
  m.fit = train_celm(data.train, data.val, m.params, spec, spec.c_grid);
  m.params.head.beta = m.fit.beta;
  return m;
}

CelmSearchResult run_celm_search(const SplitSet& data, const std::vector<SeededSpec>& grid,
                                 const CelmSearchOptions& options) {
  if (grid.empty()) throw Error("empty search grid");
  const std::string id = data.train.id;
  const bool persist = !options.run_dir.empty();
  const fs::path records_path = options.run_dir / "records.csv";
  const fs::path manifest_path = options.run_dir / "manifest.jsonl";

  std::map<std::string, RunRecord> done;
  if (persist) {
    fs::create_directories(options.run_dir);
    if (fs::exists(records_path)) {
      for (auto& r : read_records_csv(records_path)) done.emplace(r.key(), std::move(r));
    } else {
      std::ofstream(records_path) << kRecordsHeader << '\n';
    }
  }

  CelmSearchResult result;
  std::size_t index = 0;
  for (const SeededSpec& g : grid) {
    ++index;
    RunRecord r;
    r.dataset_id = id;
    r.spec = g.spec;
    r.replicate = g.replicate;
    r.seed = g.seed;
    if (auto it = done.find(r.key()); it != done.end()) {
      result.records.push_back(it->second);
      ++result.reused;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ModelParams params = init_kernels(g.spec, g.seed);
      CelmResult fit;
      {
        const HiddenMatrix h_train = assemble_H(data.train, params, g.spec);
        const HiddenMatrix h_val = assemble_H(data.val, params, g.spec);
        fit = fit_head(h_train, data.train, h_val, data.val, g.spec.c_grid);
      }
      const HiddenMatrix h_test = assemble_H(data.test, params, g.spec);
      const auto rows = evaluate_predictions(data.test, predict_targets(h_test, fit.beta, fit.normalizer));
      r.ok = true;
      r.c_star = fit.c;
      r.val_eps_n = fit.val_score;
      r.test_eps_n = mean_eps_n(rows);
      r.solve_count = fit.solve_count;
    } catch (const Error& e) {
      r.ok = false;
      r.error = e.what();
    } catch (const std::bad_alloc&) {
      r.ok = false;
      r.error = "out of memory";
    }
    r.seconds = seconds_since(t0);
    if (persist) {
      std::ostringstream row;
      row << std::setprecision(17);
      write_record_row(row, r);
      std::string line = row.str();
      line.pop_back();
      append_line(records_path, line);
      append_line(manifest_path, record_json(r).dump());
    }
    if (options.progress) {
      std::ostringstream msg;
      msg << "[" << index << "/" << grid.size() << "] " << g.spec.key() << " seed#" << g.replicate << ": ";
      if (r.ok)
        msg << "C*=" << r.c_star << " val=" << r.val_eps_n << " test=" << r.test_eps_n << " (" << r.seconds << " s)";
      else
        msg << "failed: " << r.error;
      options.progress(msg.str());
    }
    result.records.push_back(std::move(r));
  }

  result.best = select_best(result.records, options.select_on);
  if (persist) {
    json sel = {{"type", "selection"},
                {"method", "CELM"},
                {"dataset", id},
                {"select_on", to_string(options.select_on)},
                {"master_seed", options.master_seed},
                {"runs", result.records.size()},
                {"best", record_json(result.best)}};
    append_line(manifest_path, sel.dump());
  }
  return result;
}

CnnGrid CnnGrid::paper() {
  return {{kPaperBatchSizes.begin(), kPaperBatchSizes.end()},
          {kPaperLearningRates.begin(), kPaperLearningRates.end()},
          3,
          300};
}

CnnGrid CnnGrid::desk() { return {{64}, {1e-3, 1e-4}, 1, 30}; }

BootstrapResult bootstrap_cnn(const SplitSet& data, const ArchSpec& best_spec, const CnnGrid& grid,
                              std::uint64_t master_seed, const fs::path& run_dir, const ProgressFn& progress) {
  if (grid.size() == 0) throw Error("empty CNN grid");
  const bool persist = !run_dir.empty();
  if (persist) fs::create_directories(run_dir / "cnn");
  BootstrapResult result;
  bool found = false;
  for (int n : grid.batch_sizes) {
    for (double lr : grid.learning_rates) {
      for (int run = 0; run < grid.runs; ++run) {
        CnnRunRecord rec;
        rec.dataset_id = data.train.id;
        rec.spec_key = best_spec.key();
        rec.batch_size = n;
        rec.learning_rate = lr;
        rec.run = run;
        std::ostringstream tag;
        tag << "N" << n << "-lr" << lr << "-r" << run;
        rec.seed = derive_seed(master_seed, text_hash(rec.dataset_id + "/" + rec.spec_key + "/" + tag.str()));
        TrainConfig cfg{n, lr, grid.epochs, rec.seed};
        try {
          CnnResult r = train_cnn(data.train, data.val, best_spec, cfg);
          rec.ok = true;
          rec.best_epoch = r.best.epoch;
          rec.val_loss = r.best.val_loss;
          rec.seconds = r.seconds;
          if (persist) write_training_log(r.log, run_dir / "cnn" / (tag.str() + ".csv"));
          if (!found || rec.val_loss < result.best_record.val_loss) {
            found = true;
            result.best = std::move(r.best);
            result.best_record = rec;
          }
        } catch (const Error& e) {
          rec.ok = false;
          rec.error = e.what();
        }
        if (persist) {
          append_line(run_dir / "manifest.jsonl",
                      json{{"type", "cnn_run"},
                           {"dataset", rec.dataset_id},
                           {"spec", rec.spec_key},
                           {"batch_size", n},
                           {"learning_rate", lr},
                           {"run", run},
                           {"seed", rec.seed},
                           {"ok", rec.ok},
                           {"best_epoch", rec.best_epoch},
                           {"val_loss", rec.val_loss},
                           {"seconds", rec.seconds},
                           {"error", rec.error}}
                          .dump());
        }
        if (progress) {
          std::ostringstream msg;
          msg << "cnn " << tag.str() << ": "
              << (rec.ok ? "best val loss " + std::to_string(rec.val_loss) + " at epoch " +
                               std::to_string(rec.best_epoch)
                         : "failed: " + rec.error);
          progress(msg.str());
        }
        result.runs.push_back(std::move(rec));
      }
    }
  }
  if (!found) throw DivergenceError("every CNN run diverged");
  return result;
}

HybridPlan plan_hybrids(const std::map<std::string, CnnBest>& bests) {
  HybridPlan plan;
  std::map<FrameGroup, double> best_score;
  for (const auto& [id, b] : bests) {  // map order: ties keep the smaller id
    plan.hcelm_source[id] = id;
    const FrameGroup g = frame_group(b.strategy);
    auto it = best_score.find(g);
    if (it == best_score.end() || b.score < it->second) {
      best_score[g] = b.score;
      plan.group_best[g] = id;
    }
  }
  for (const auto& [id, b] : bests) plan.hcelm3_source[id] = plan.group_best.at(frame_group(b.strategy));
  return plan;
}

std::map<std::pair<std::string, MethodTag>, HybridModel> build_hybrids(
    const std::map<std::string, CnnBest>& bests, const std::map<std::string, const SplitSet*>& data,
    std::span<const double> c_grid) {
  const HybridPlan plan = plan_hybrids(bests);
  std::map<std::pair<std::string, MethodTag>, HybridModel> out;
  for (const auto& [id, splits] : data) {
    if (!bests.count(id)) throw Error("no CNN best for dataset " + id);
    const LabelStrategy strategy = splits->train.strategy;
    for (MethodTag m : {MethodTag::HCELM, MethodTag::HCELM3}) {
      const std::string& source_id = (m == MethodTag::HCELM ? plan.hcelm_source : plan.hcelm3_source).at(id);
      const Checkpoint& source = bests.at(source_id).checkpoint;
      ArchSpec spec = source.spec;
      spec.n_outputs = output_size(strategy);
      spec.c_grid.assign(c_grid.begin(), c_grid.end());
      HybridResult h = train_hybrid(source, splits->train, splits->val, spec, c_grid);
      out[{id, m}] = HybridModel{spec, std::move(h.params), std::move(h.celm), source_id, h.encoder_hash};
    }
  }
  return out;
}

}  // namespace celmnav
