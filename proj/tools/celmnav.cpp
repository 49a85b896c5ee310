// celmnav command line: dataset generation, preprocessing, CELM search, CNN
// bootstrap, hybrids, evaluation and reporting. Every subcommand appends an
// event to <run-dir>/manifest.jsonl.

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "celmnav/archgen.hpp"
#include "celmnav/dataset.hpp"
#include "celmnav/elm.hpp"
#include "celmnav/error.hpp"
#include "celmnav/gd.hpp"
#include "celmnav/imagery.hpp"
#include "celmnav/navmetrics.hpp"
#include "celmnav/neural.hpp"
#include "celmnav/parallel.hpp"
#include "celmnav/preprocess.hpp"
#include "celmnav/search.hpp"
#include "json.hpp"

using namespace celmnav;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Preset {
  SplitSizes splits;
  GridAxes axes;
  int seeds;
  CnnGrid cnn;
};

Preset preset(const std::string& name) {
  if (name == "paper") return {SplitSizes{}, GridAxes::paper(), 3, CnnGrid::paper()};
  if (name == "desk") return {SplitSizes{600, 200, 200}, GridAxes::desk(), 2, CnnGrid::desk()};
  throw Error("unknown preset '" + name + "' (desk or paper)");
}

struct Common {
  fs::path run_dir = "run";
  std::uint64_t master_seed = 64;
  std::size_t parallelism = 0;
  std::string preset = "desk";
};

void record_event(const Common& c, const std::string& type, json body) {
  fs::create_directories(c.run_dir);
  body["type"] = type;
  body["master_seed"] = c.master_seed;
  body["preset"] = c.preset;
  body["time"] = static_cast<std::int64_t>(std::time(nullptr));
  std::ofstream(c.run_dir / "manifest.jsonl", std::ios::app) << body.dump() << '\n';
}

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

std::vector<LabelStrategy> parse_strategies(const std::string& text) {
  if (text == "all") return {kAllStrategies.begin(), kAllStrategies.end()};
  std::vector<LabelStrategy> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) out.push_back(parse_strategy(item));
  return out;
}

json normalizer_json(const Normalizer& n) {
  return {{"min", std::vector<double>(n.min.begin(), n.min.end())},
          {"max", std::vector<double>(n.max.begin(), n.max.end())}};
}

Normalizer normalizer_from(const json& j) {
  const auto lo = j.at("min").get<std::vector<double>>(), hi = j.at("max").get<std::vector<double>>();
  Normalizer n;
  n.min = Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  n.max = Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  return n;
}

// ------------------------------------------------------------ layout ---

fs::path celm_dir(const Common& c, const std::string& id) { return c.run_dir / "celm" / id; }
fs::path cnn_dir(const Common& c, const std::string& id) { return c.run_dir / "cnn" / id; }
fs::path cnn_model(const Common& c, const std::string& id) { return cnn_dir(c, id) / "best.model"; }
fs::path hybrid_plan(const Common& c) { return c.run_dir / "hybrids" / "plan.json"; }

RunRecord celm_selection(const Common& c, const std::string& id, SelectOn on) {
  const fs::path p = celm_dir(c, id) / "records.csv";
  if (!fs::exists(p)) throw Error("no CELM records for " + id + " under " + p.parent_path().string());
  return select_best(read_records_csv(p), on);
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck, json meta) {
  meta["normalizer"] = normalizer_json(ck.normalizer);
  meta["epoch"] = ck.epoch;
  meta["val_loss"] = ck.val_loss;
  save_model(path, {ck.spec, ck.params, meta.dump()});
}

std::pair<Checkpoint, json> load_checkpoint(const fs::path& path) {
  const StoredModel m = load_model(path);
  const json meta = json::parse(m.metadata_json);
  Checkpoint ck;
  ck.spec = m.spec;
  ck.params = m.params;
  ck.normalizer = normalizer_from(meta.at("normalizer"));
  ck.epoch = meta.value("epoch", 0);
  ck.val_loss = meta.value("val_loss", 0.0);
  return {ck, meta};
}

// --------------------------------------------------------- commands ---

struct GenArgs {
  std::string body = "D";
  std::string strategies = "all";
  std::optional<std::uint64_t> cloud_seed;
  std::string format = "png";
  std::optional<std::size_t> train, val, test;
  fs::path out;
};

void gen_dataset(const Common& c, const GenArgs& a) {
  SplitSizes sizes = preset(c.preset).splits;
  if (a.train) sizes.train = *a.train;
  if (a.val) sizes.val = *a.val;
  if (a.test) sizes.test = *a.test;
  const CameraModel cam;
  const BodyModel body = body_preset(a.body, cam);
  const std::uint64_t cloud_seed = a.cloud_seed.value_or(c.master_seed);
  const auto cloud = sample_cloud(sizes.total(), cloud_seed);
  BuildOptions opt;
  opt.format = a.format == "f32" ? ImageFormat::RawF32 : ImageFormat::Png;
  opt.splits = sizes;
  opt.seed = c.master_seed;
  opt.body_name = a.body;
  const fs::path out = a.out.empty() ? c.run_dir / "datasets" / a.body : a.out;
  const auto manifests = build_datasets(body, cam, cloud, parse_strategies(a.strategies), out, opt);
  json ids = json::array();
  for (const auto& m : manifests) {
    ids.push_back({{"id", m.dataset_id()}, {"manifest", m.path.string()}});
    std::cout << m.dataset_id() << " " << m.path.string() << " (" << m.records.size() << " images)\n";
  }
  record_event(c, "gen_dataset", {{"body", a.body},
                                  {"cloud_seed", cloud_seed},
                                  {"splits", {sizes.train, sizes.val, sizes.test}},
                                  {"datasets", ids}});
}

struct PreprocessArgs {
  std::vector<fs::path> manifests;
  double noise_sigma = 2.0 / 255.0;
  std::string weighting = "intensity";
  fs::path out;
};

void preprocess(const Common& c, const PreprocessArgs& a) {
  PipelineOptions opt;
  if (a.noise_sigma > 0) opt.noise = NoiseSpec{a.noise_sigma, 0};
  opt.weighting = a.weighting == "binary" ? CentroidWeighting::Binary : CentroidWeighting::Intensity;
  for (const auto& path : a.manifests) {
    const DatasetManifest m = read_manifest(path);
    const SplitSet s = preprocess_manifest(m, opt);
    const fs::path out = (a.out.empty() ? c.run_dir / "data" : a.out) / m.dataset_id();
    save_splits(s, out);
    std::cout << m.dataset_id() << " -> " << out.string() << " (" << s.train.size() << "/" << s.val.size() << "/"
              << s.test.size() << ")\n";
    record_event(c, "preprocess",
                 {{"dataset", m.dataset_id()}, {"manifest", path.string()}, {"out", out.string()},
                  {"noise_sigma", a.noise_sigma}, {"cob_weighting", a.weighting}});
  }
}

// <run-dir>/records.csv gathers the per-dataset CELM records.
void merge_records(const Common& c) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(c.run_dir / "celm"))
    if (fs::exists(e.path() / "records.csv")) files.push_back(e.path() / "records.csv");
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> all;
  for (const auto& f : files) {
    auto rows = read_records_csv(f);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_records_csv(all, c.run_dir / "records.csv");
}

struct SearchArgs {
  std::vector<fs::path> data;
  fs::path grid;
  std::string select_on = "test";
  int seeds = 0;
};

void search_celm(const Common& c, const SearchArgs& a) {
  const Preset p = preset(c.preset);
  for (const auto& dir : a.data) {
    const SplitSet data = load_splits(dir);
    const std::string id = data.train.id;
    std::vector<SeededSpec> grid;
    if (!a.grid.empty()) {
      grid = read_grid_csv(a.grid);
      for (auto& g : grid) g.spec.n_outputs = output_size(data.train.strategy);
    } else {
      grid = with_seeds(enumerate_specs(data.train.strategy, p.axes), c.master_seed, a.seeds > 0 ? a.seeds : p.seeds);
    }
    CelmSearchOptions opt;
    opt.run_dir = celm_dir(c, id);
    opt.select_on = parse_select_on(a.select_on);
    opt.master_seed = c.master_seed;
    opt.progress = progress;
    fs::create_directories(opt.run_dir);
    write_grid_csv(grid, opt.run_dir / "grid.csv");
    const CelmSearchResult r = run_celm_search(data, grid, opt);
    std::cout << id << ": best " << r.best.spec.key() << " seed " << r.best.seed << " C*=" << r.best.c_star
              << " val " << r.best.val_eps_n << "% test " << r.best.test_eps_n << "% (" << r.records.size()
              << " runs, " << r.reused << " reused)\n";
    record_event(c, "search_celm",
                 {{"dataset", id},
                  {"data", dir.string()},
                  {"records", (opt.run_dir / "records.csv").string()},
                  {"runs", r.records.size()},
                  {"best", r.best.spec.key()},
                  {"best_seed", r.best.seed},
                  {"select_on", a.select_on}});
  }
  merge_records(c);
}

struct CnnArgs {
  std::vector<fs::path> data;
  std::string select_on = "test";
  int epochs = 0;
  std::vector<int> batch_sizes;
};

void train_cnn_cmd(const Common& c, const CnnArgs& a) {
  CnnGrid grid = preset(c.preset).cnn;
  if (a.epochs > 0) grid.epochs = a.epochs;
  if (!a.batch_sizes.empty()) grid.batch_sizes = a.batch_sizes;
  for (const auto& dir : a.data) {
    const SplitSet data = load_splits(dir);
    const std::string id = data.train.id;
    const RunRecord best = celm_selection(c, id, parse_select_on(a.select_on));
    const BootstrapResult r = bootstrap_cnn(data, best.spec, grid, c.master_seed, cnn_dir(c, id), progress);
    const double score = mean_eps_n(evaluate_predictions(data.test, predict_cnn(data.test, r.best), MethodTag::CNN));
    save_checkpoint(cnn_model(c, id), r.best,
                    {{"dataset", id},
                     {"strategy", std::string(to_string(data.train.strategy))},
                     {"score", score},
                     {"batch_size", r.best_record.batch_size},
                     {"learning_rate", r.best_record.learning_rate}});
    std::cout << id << ": CNN " << best.spec.key() << " N=" << r.best_record.batch_size
              << " lr=" << r.best_record.learning_rate << " val loss " << r.best.val_loss << " test " << score << "%\n";
    record_event(c, "train_cnn", {{"dataset", id}, {"spec", best.spec.key()}, {"runs", r.runs.size()},
                                  {"test_eps_n", score}, {"model", cnn_model(c, id).string()}});
  }
}

std::map<std::string, CnnBest> load_cnn_bests(const Common& c) {
  std::map<std::string, CnnBest> bests;
  const fs::path root = c.run_dir / "cnn";
  if (!fs::exists(root)) throw Error("no CNN checkpoints under " + root.string());
  for (const auto& e : fs::directory_iterator(root)) {
    if (!fs::exists(e.path() / "best.model")) continue;
    auto [ck, meta] = load_checkpoint(e.path() / "best.model");
    CnnBest b;
    b.strategy = parse_strategy(meta.at("strategy").get<std::string>());
    b.checkpoint = std::move(ck);
    b.score = meta.at("score").get<double>();
    bests[meta.at("dataset").get<std::string>()] = std::move(b);
  }
  return bests;
}

void build_hybrids_cmd(const Common& c, const std::vector<fs::path>& dirs) {
  const auto bests = load_cnn_bests(c);
  std::vector<SplitSet> sets;
  sets.reserve(dirs.size());
  std::map<std::string, const SplitSet*> data;
  for (const auto& d : dirs) {
    sets.push_back(load_splits(d));
    data[sets.back().train.id] = &sets.back();
  }
  const HybridPlan plan = plan_hybrids(bests);
  const auto models = build_hybrids(bests, data, kPaperCGrid);
  json out = {{"hcelm", plan.hcelm_source}, {"hcelm3", plan.hcelm3_source}, {"models", json::array()}};
  for (const auto& [key, m] : models) {
    std::cout << key.first << " " << to_string(key.second) << ": encoder " << m.encoder_source << " C*=" << m.celm.c
              << " val " << m.celm.val_score << "%\n";
    out["models"].push_back({{"dataset", key.first},
                             {"method", std::string(to_string(key.second))},
                             {"encoder", m.encoder_source},
                             {"encoder_hash", m.encoder_hash},
                             {"c_star", m.celm.c},
                             {"val_eps_n", m.celm.val_score}});
  }
  fs::create_directories(hybrid_plan(c).parent_path());
  std::ofstream(hybrid_plan(c)) << out.dump(2) << '\n';
  record_event(c, "build_hybrids", {{"plan", hybrid_plan(c).string()}, {"models", models.size()}});
}

void evaluate(const Common& c, const std::vector<fs::path>& dirs, const std::string& select_on) {
  std::optional<json> plan;
  if (fs::exists(hybrid_plan(c))) plan = json::parse(std::ifstream(hybrid_plan(c)));
  const fs::path out = c.run_dir / "metrics";
  fs::create_directories(out);
  for (const auto& dir : dirs) {
    const SplitSet data = load_splits(dir);
    const Dataset& test = data.test;
    const std::string id = test.id;
    const auto emit = [&](MethodTag m, const Eigen::MatrixXd& pred) {
      const MetricTable t{id, test.body, test.strategy, m, evaluate_predictions(test, pred, m)};
      const fs::path p = out / (id + "_" + std::string(to_string(m)) + ".csv");
      write_metric_rows(t, p);
      std::cout << id << " " << to_string(m) << ": mean eps_n " << mean_eps_n(t.rows) << "%\n";
      record_event(c, "evaluate", {{"dataset", id}, {"method", std::string(to_string(m))}, {"metrics", p.string()},
                                   {"mean_eps_n", mean_eps_n(t.rows)}});
    };

    // CELM heads are refit in double precision from the recorded selection.
    const RunRecord best = celm_selection(c, id, parse_select_on(select_on));
    const CelmModel celm = fit_celm_model(data, best.spec, best.seed);
    emit(MethodTag::CELM, predict_targets(assemble_H(test, celm.params, best.spec), celm.fit.beta, celm.fit.normalizer));

    if (!fs::exists(cnn_model(c, id))) continue;
    const Checkpoint cnn = load_checkpoint(cnn_model(c, id)).first;
    emit(MethodTag::CNN, predict_cnn(test, cnn));

    if (!plan) continue;
    for (auto [tag, key] : {std::pair{MethodTag::HCELM, "hcelm"}, std::pair{MethodTag::HCELM3, "hcelm3"}}) {
      const auto& sources = (*plan)[key];
      if (!sources.contains(id)) continue;
      const Checkpoint src = load_checkpoint(cnn_model(c, sources[id].get<std::string>())).first;
      ArchSpec spec = src.spec;
      spec.n_outputs = output_size(test.strategy);
      const HybridResult h = train_hybrid(src, data.train, data.val, spec, kPaperCGrid);
      emit(tag, predict_targets(assemble_H(test, h.params, spec), h.celm.beta, h.celm.normalizer));
    }
  }
}

void report(const Common& c, int bins) {
  const fs::path in = c.run_dir / "metrics";
  if (!fs::exists(in)) throw Error("no metrics under " + in.string() + "; run evaluate first");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in))
    if (e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MetricTable> tables;
  for (const auto& f : files) tables.push_back(read_metric_rows(f));
  const fs::path out = c.run_dir / "report";
  emit_report(tables, out, bins);
  std::cout << "report for " << tables.size() << " tables written to " << out.string() << "\n";
  record_event(c, "report", {{"tables", tables.size()}, {"out", out.string()}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional extreme learning machines for small-body optical navigation"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--run-dir", common.run_dir, "run directory (manifest.jsonl, records.csv, artifacts)");
  app.add_option("--master-seed", common.master_seed, "master seed");
  app.add_option("--parallelism", common.parallelism, "worker threads (0 = hardware concurrency)");
  app.add_option("--preset", common.preset, "scale preset")->check(CLI::IsMember({"desk", "paper"}));

  GenArgs gen;
  auto* g = app.add_subcommand("gen-dataset", "render a viewpoint cloud and write one manifest per strategy");
  g->add_option("--body", gen.body, "body preset (D, H, L, P, sphere)");
  g->add_option("--strategies", gen.strategies, "'all' or comma-separated strategy names/numbers");
  g->add_option("--cloud-seed", gen.cloud_seed, "viewpoint cloud seed (default: master seed)");
  g->add_option("--format", gen.format, "image format")->check(CLI::IsMember({"png", "f32"}));
  g->add_option("--train", gen.train, "train split size (default: preset)");
  g->add_option("--val", gen.val, "validation split size (default: preset)");
  g->add_option("--test", gen.test, "test split size (default: preset)");
  g->add_option("--out", gen.out, "output directory (default: <run-dir>/datasets/<body>)");

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "S0 -> S2 pipeline for dataset manifests");
  p->add_option("--dataset", pre.manifests, "manifest.jsonl path(s)")->required()->check(CLI::ExistingFile);
  p->add_option("--noise-sigma", pre.noise_sigma, "Gaussian noise sigma before resizing (0 disables)");
  p->add_option("--cob-weighting", pre.weighting, "CoB centroid weighting")
      ->check(CLI::IsMember({"intensity", "binary"}));
  p->add_option("--out", pre.out, "output root (default: <run-dir>/data)");

  SearchArgs search;
  auto* s = app.add_subcommand("search-celm", "CELM grid search per preprocessed dataset");
  s->add_option("--data", search.data, "preprocessed dataset directories")->required()->check(CLI::ExistingDirectory);
  s->add_option("--grid", search.grid, "grid CSV (default: preset grid)")->check(CLI::ExistingFile);
  s->add_option("--seeds", search.seeds, "seeds per spec (default: preset)");
  s->add_option("--select-on", search.select_on, "selection split")->check(CLI::IsMember({"test", "val"}));

  CnnArgs cnn;
  auto* t = app.add_subcommand("train-cnn", "CNN bootstrap on the selected CELM architecture");
  t->add_option("--data", cnn.data, "preprocessed dataset directories")->required()->check(CLI::ExistingDirectory);
  t->add_option("--select-on", cnn.select_on, "selection split")->check(CLI::IsMember({"test", "val"}));
  t->add_option("--epochs", cnn.epochs, "override the preset epoch budget");
  t->add_option("--batch-sizes", cnn.batch_sizes, "override the preset batch sizes, comma separated")->delimiter(',');

  std::vector<fs::path> hybrid_data;
  auto* h = app.add_subcommand("build-hybrids", "HCELM and HCELM3 heads on trained CNN encoders");
  h->add_option("--data", hybrid_data, "preprocessed dataset directories")->required()->check(CLI::ExistingDirectory);

  std::vector<fs::path> eval_data;
  std::string eval_select = "test";
  auto* e = app.add_subcommand("evaluate", "test-set metric rows for every available method");
  e->add_option("--data", eval_data, "preprocessed dataset directories")->required()->check(CLI::ExistingDirectory);
  e->add_option("--select-on", eval_select, "CELM selection split")->check(CLI::IsMember({"test", "val"}));

  int bins = 30;
  auto* r = app.add_subcommand("report", "summary tables, histograms and ellipses from evaluated metrics");
  r->add_option("--bins", bins, "histogram bins");

  CLI11_PARSE(app, argc, argv);
  if (common.parallelism > 0) set_parallelism(common.parallelism);

  try {
    if (*g) gen_dataset(common, gen);
    if (*p) preprocess(common, pre);
    if (*s) search_celm(common, search);
    if (*t) train_cnn_cmd(common, cnn);
    if (*h) build_hybrids_cmd(common, hybrid_data);
    if (*e) evaluate(common, eval_data, eval_select);
    if (*r) report(common, bins);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << std::endl;
    return 1;
  }
  return 0;
}
