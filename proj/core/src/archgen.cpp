#include "celmnav/archgen.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "celmnav/error.hpp"
#include "celmnav/rng.hpp"

namespace celmnav {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view text, const std::array<E, N>& values, const char* what) {
  for (E v : values)
    if (text == to_string(v)) return v;
  throw Error(std::string("unknown ") + what + " '" + std::string(text) + "'");
}

constexpr std::array kDistributions = {Distribution::Uniform, Distribution::Normal, Distribution::Orthogonal};
constexpr std::array kActivations = {Activation::NRelu, Activation::Relu, Activation::Tanh, Activation::None};
constexpr std::array kPoolings = {Pooling::Mean, Pooling::Max};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::Uniform: return "uniform";
    case Distribution::Normal: return "normal";
    case Distribution::Orthogonal: return "orthogonal";
  }
  return "?";
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::NRelu: return "nrelu";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::None: return "none";
  }
  return "?";
}

std::string_view to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "max"; }

Distribution parse_distribution(std::string_view t) { return parse_enum(t, kDistributions, "distribution"); }
Activation parse_activation(std::string_view t) { return parse_enum(t, kActivations, "activation"); }
Pooling parse_pooling(std::string_view t) { return parse_enum(t, kPoolings, "pooling"); }

std::size_t ArchSpec::feature_size() const {
  const auto s = static_cast<std::size_t>(side_at(depth));
  return s * s * static_cast<std::size_t>(kernels_at(depth));
}

void ArchSpec::validate() const {
  if (depth < 0 || depth > kMaxDepth) throw ShapeError("depth must be in 0..5, got " + std::to_string(depth));
  if (n_outputs < 1) throw ShapeError("n_outputs must be positive");
  if (input_side < 2 || (input_side >> depth) << depth != input_side || side_at(depth) < 1)
    throw ShapeError("input side " + std::to_string(input_side) + " is not divisible by 2^depth");
  if (batch_size < 1) throw Error("batch size must be positive");
  if (!(learning_rate > 0)) throw Error("learning rate must be positive");
  for (double c : c_grid)
    if (!(c > 0)) throw Error("regularization coefficients must be positive");
}

std::string ArchSpec::key() const {
  std::string k = "d" + std::to_string(depth) + "-" + std::string(to_string(distribution)) + "-" +
                  std::string(to_string(activation)) + "-" + std::string(to_string(pooling)) + "-o" +
                  std::to_string(n_outputs);
  if (input_side != 128) k += "-s" + std::to_string(input_side);
  return k;
}

bool same_architecture(const ArchSpec& a, const ArchSpec& b) { return a.arch_tuple() == b.arch_tuple(); }
bool same_encoder(const ArchSpec& a, const ArchSpec& b) {
  return a.depth == b.depth && a.activation == b.activation && a.pooling == b.pooling && a.input_side == b.input_side;
}
bool spec_less(const ArchSpec& a, const ArchSpec& b) { return a.arch_tuple() < b.arch_tuple(); }

std::int64_t ParamCount::cumulative(int depth) const {
  std::int64_t total = 0;
  for (const auto& l : layers)
    if (l.depth <= depth) total += l.weights + l.biases;
  return total;
}

ParamCount count_params(const ArchSpec& spec) {
  ParamCount pc;
  for (int i = 1; i <= spec.depth; ++i) {
    LayerCount l;
    l.depth = i;
    l.side = spec.side_at(i - 1);
    l.channels = ArchSpec::kernels_at(i);
    l.weights = 9LL * ArchSpec::kernels_at(i) * ArchSpec::kernels_at(i - 1);
    l.biases = ArchSpec::kernels_at(i);
    pc.layers.push_back(l);
  }
  pc.fc_features = static_cast<std::int64_t>(spec.feature_size());
  pc.beta = pc.fc_features * spec.n_outputs;
  pc.beta0 = spec.n_outputs;
  return pc;
}

std::vector<LayerShape> layer_shapes(const ArchSpec& spec) {
  const ParamCount pc = count_params(spec);
  std::vector<LayerShape> rows;
  rows.push_back({"I", "InputLayer", {spec.input_side, spec.input_side, 1}, 0});
  for (const auto& l : pc.layers) {
    const std::string n = std::to_string(l.depth);
    rows.push_back({"C" + n, "Conv2D", {l.side, l.side, l.channels}, l.weights + l.biases});
    rows.push_back({"A" + n, "Activation", {l.side, l.side, l.channels}, 0});
    rows.push_back({"P" + n, "Pooling", {l.side / 2, l.side / 2, l.channels}, 0});
  }
  rows.push_back({"FC", "Flattening", {static_cast<int>(pc.fc_features)}, 0});
  rows.push_back({"O", "Dense", {spec.n_outputs}, pc.head_total()});
  return rows;
}

GridAxes GridAxes::paper() {
  return {{1, 2, 3, 4, 5},
          {kDistributions.begin(), kDistributions.end()},
          {kActivations.begin(), kActivations.end()},
          {kPoolings.begin(), kPoolings.end()}};
}

GridAxes GridAxes::desk() {
  return {{1, 2, 3}, {Distribution::Uniform}, {Activation::Relu, Activation::Tanh}, {Pooling::Mean, Pooling::Max}};
}

std::vector<ArchSpec> enumerate_specs(LabelStrategy strategy, const GridAxes& axes) {
  std::vector<ArchSpec> out;
  out.reserve(axes.size());
  for (int d : axes.depths)
    for (Distribution k : axes.distributions)
      for (Activation a : axes.activations)
        for (Pooling p : axes.poolings) {
          ArchSpec s;
          s.depth = d;
          s.distribution = k;
          s.activation = a;
          s.pooling = p;
          s.n_outputs = output_size(strategy);
          s.validate();
          out.push_back(std::move(s));
        }
  std::stable_sort(out.begin(), out.end(), spec_less);
  return out;
}

std::vector<SeededSpec> with_seeds(const std::vector<ArchSpec>& specs, std::uint64_t master_seed, int n_seeds) {
  if (n_seeds < 1) throw Error("need at least one seed per spec");
  std::vector<SeededSpec> out;
  for (const auto& s : specs) {
    const std::uint64_t base = derive_seed(master_seed, fnv1a(s.key()));
    for (int r = 0; r < n_seeds; ++r) out.push_back({s, r, derive_seed(base, static_cast<std::uint64_t>(r))});
  }
  return out;
}

void write_grid_csv(const std::vector<SeededSpec>& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << "format_version," << kThetaFormatVersion << '\n';
  out << "key,depth,distribution,activation,pooling,n_outputs,input_side,replicate,seed\n";
  for (const auto& g : grid) {
    const ArchSpec& s = g.spec;
    out << s.key() << ',' << s.depth << ',' << to_string(s.distribution) << ',' << to_string(s.activation) << ','
        << to_string(s.pooling) << ',' << s.n_outputs << ',' << s.input_side << ',' << g.replicate << ',' << g.seed
        << '\n';
  }
}

std::vector<SeededSpec> read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const auto version = split_csv(line);
  if (version.size() != 2 || version[0] != "format_version" || std::stoi(version[1]) != kThetaFormatVersion)
    throw IoError("unsupported grid file " + path.string());
  std::getline(in, line);
  std::vector<SeededSpec> grid;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 9) throw IoError("malformed grid row: " + line);
    SeededSpec g;
    g.spec.depth = std::stoi(c[1]);
    g.spec.distribution = parse_distribution(c[2]);
    g.spec.activation = parse_activation(c[3]);
    g.spec.pooling = parse_pooling(c[4]);
    g.spec.n_outputs = std::stoi(c[5]);
    g.spec.input_side = std::stoi(c[6]);
    g.replicate = std::stoi(c[7]);
    g.seed = std::stoull(c[8]);
    g.spec.validate();
    grid.push_back(std::move(g));
  }
  return grid;
}

std::string spec_to_json(const ArchSpec& s) {
  nlohmann::json j = {{"format_version", kThetaFormatVersion},
                      {"depth", s.depth},
                      {"distribution", to_string(s.distribution)},
                      {"activation", to_string(s.activation)},
                      {"pooling", to_string(s.pooling)},
                      {"n_outputs", s.n_outputs},
                      {"c_grid", s.c_grid},
                      {"batch_size", s.batch_size},
                      {"learning_rate", s.learning_rate},
                      {"input_side", s.input_side}};
  return j.dump();
}

ArchSpec spec_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("format_version", 0) != kThetaFormatVersion) throw IoError("unsupported spec format version");
  ArchSpec s;
  s.depth = j.at("depth").get<int>();
  s.distribution = parse_distribution(j.at("distribution").get<std::string>());
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.pooling = parse_pooling(j.at("pooling").get<std::string>());
  s.n_outputs = j.at("n_outputs").get<int>();
  s.c_grid = j.at("c_grid").get<std::vector<double>>();
  s.batch_size = j.at("batch_size").get<int>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.input_side = j.value("input_side", 128);
  s.validate();
  return s;
}

std::vector<ReferenceTheta> read_reference_thetas(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ReferenceTheta> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto c = split_csv(line);
    if (c.size() == 2 && c[0] == "format_version") {
      if (std::stoi(c[1]) != kThetaFormatVersion) throw IoError("unsupported reference format");
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    if (c.size() != 8) throw IoError("malformed reference row: " + line);
    out.push_back({c[0], std::stoi(c[1]), parse_distribution(c[2]), parse_activation(c[3]), parse_pooling(c[4]),
                   std::stod(c[5]), std::stoi(c[6]), std::stod(c[7])});
  }
  return out;
}

}  // namespace celmnav
