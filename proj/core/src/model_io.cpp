#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "celmnav/error.hpp"
#include "celmnav/neural.hpp"

namespace celmnav {

static_assert(std::endian::native == std::endian::little, "model blobs are written in native little-endian order");

namespace {

constexpr char kMagic[8] = {'C', 'E', 'L', 'M', 'N', 'A', 'V', '\0'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write " + path.string());
  }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i32(std::int32_t v) { raw(&v, 4); }
  void f32s(const double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto f = static_cast<float>(p[i]);
      raw(&f, 4);
    }
  }
  void row_major(const Eigen::MatrixXd& m) {
    const RowMatrix r = m;
    f32s(r.data(), r.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("short write");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot read " + path.string());
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated model blob " + path_.string());
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, 4);
    return v;
  }
  void f32s(double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      float f;
      raw(&f, 4);
      p[i] = f;
    }
  }
  Eigen::MatrixXd row_major(Eigen::Index rows, Eigen::Index cols) {
    RowMatrix r(rows, cols);
    f32s(r.data(), r.size());
    return r;
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

}  // namespace

void save_model(const std::filesystem::path& path, const StoredModel& model) {
  model.params.validate(model.spec);
  Writer w(path);
  w.raw(kMagic, sizeof kMagic);
  w.u32(kModelFormatVersion);
  const ArchSpec& s = model.spec;
  for (int v : {s.depth, static_cast<int>(s.distribution), static_cast<int>(s.activation),
                static_cast<int>(s.pooling), s.n_outputs, s.input_side})
    w.i32(v);
  w.u32(static_cast<std::uint32_t>(model.params.layers.size()));
  for (const auto& l : model.params.layers) {
    w.u32(static_cast<std::uint32_t>(l.weights.rows()));
    w.u32(static_cast<std::uint32_t>(l.weights.cols()));
    w.row_major(l.weights);
    w.f32s(l.biases.data(), l.biases.size());
  }
  const HeadParams& h = model.params.head;
  w.u32(static_cast<std::uint32_t>(h.beta.rows()));
  w.u32(static_cast<std::uint32_t>(h.beta.cols()));
  w.row_major(h.beta);
  w.u32(h.beta0 ? 1 : 0);
  if (h.beta0) w.f32s(h.beta0->data(), h.beta0->size());
  w.finish();

  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["spec"] = nlohmann::json::parse(spec_to_json(model.spec));
  j["metadata"] = nlohmann::json::parse(model.metadata_json);
  std::ofstream js(sidecar(path));
  if (!js) throw IoError("cannot write " + sidecar(path).string());
  js << j.dump(2) << '\n';
}

StoredModel load_model(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a model blob");
  if (const auto v = r.u32(); v != kModelFormatVersion)
    throw IoError("unsupported model format version " + std::to_string(v));

  StoredModel m;
  {
    std::ifstream js(sidecar(path));
    if (!js) throw IoError("missing sidecar " + sidecar(path).string());
    const auto j = nlohmann::json::parse(js);
    m.spec = spec_from_json(j.at("spec").dump());
    m.metadata_json = j.value("metadata", nlohmann::json::object()).dump();
  }
  ArchSpec& s = m.spec;
  const int depth = r.i32(), dist = r.i32(), act = r.i32(), pool = r.i32(), n_out = r.i32(), side = r.i32();
  if (depth != s.depth || dist != static_cast<int>(s.distribution) || act != static_cast<int>(s.activation) ||
      pool != static_cast<int>(s.pooling) || n_out != s.n_outputs || side != s.input_side)
    throw IoError("model blob header disagrees with its sidecar");

  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerParams l;
    const auto rows = r.u32(), cols = r.u32();
    l.weights = r.row_major(rows, cols);
    l.biases.resize(cols);
    r.f32s(l.biases.data(), cols);
    m.params.layers.push_back(std::move(l));
  }
  const auto rows = r.u32(), cols = r.u32();
  m.params.head.beta = r.row_major(rows, cols);
  if (r.u32() != 0) {
    Eigen::VectorXd b0(cols);
    r.f32s(b0.data(), cols);
    m.params.head.beta0 = b0;
  }
  m.params.validate(m.spec);
  return m;
}

}  // namespace celmnav
