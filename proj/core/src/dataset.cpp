#include "celmnav/dataset.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "celmnav/error.hpp"
#include "celmnav/parallel.hpp"

namespace celmnav {

namespace fs = std::filesystem;

Eigen::MatrixXd Dataset::targets() const {
  const int m = output_size(strategy);
  Eigen::MatrixXd t(static_cast<Eigen::Index>(samples.size()), m);
  for (std::size_t i = 0; i < samples.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = target_vector(samples[i].s2.labels);
  return t;
}

std::vector<TruthSample> Dataset::truths() const {
  std::vector<TruthSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, s.truth});
  return out;
}

Dataset& SplitSet::get(Split s) { return s == Split::Train ? train : (s == Split::Val ? val : test); }
const Dataset& SplitSet::get(Split s) const { return s == Split::Train ? train : (s == Split::Val ? val : test); }

Sample make_sample(std::size_t id, const GrayImage& image_s0, const GroundTruth& truth, LabelStrategy strategy,
                   std::uint64_t seed, const PipelineOptions& options) {
  Sample s;
  s.id = id;
  s.truth = truth;
  s.s2 = preprocess_image(image_s0, labels_for(truth, strategy), seed, options);
  return s;
}

Dataset relabel(const Dataset& dataset, LabelStrategy strategy) {
  Dataset out = dataset;
  out.strategy = strategy;
  out.id = dataset_id(dataset.body, strategy);
  for (auto& s : out.samples) s.s2.labels = labels_to_s2(labels_for(s.truth, strategy), s.s2.record);
  return out;
}

SplitSet relabel(const SplitSet& splits, LabelStrategy strategy) {
  return {relabel(splits.train, strategy), relabel(splits.val, strategy), relabel(splits.test, strategy)};
}

SplitSet preprocess_manifest(const DatasetManifest& manifest, const PipelineOptions& options) {
  const fs::path root = manifest.path.parent_path();
  std::vector<Sample> samples(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const ManifestRecord& r = manifest.records[i];
    const GrayImage image = read_image(root / r.image_path);
    try {
      samples[i] = make_sample(r.index, image, r.truth, manifest.strategy, r.seed, options);
    } catch (const Error& e) {
      throw Error("record " + std::to_string(r.index) + ": " + e.what());
    }
  });
  SplitSet out;
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    Dataset& d = out.get(sp);
    d.id = manifest.dataset_id();
    d.body = manifest.body_name;
    d.strategy = manifest.strategy;
    d.camera = manifest.camera;
  }
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.get(manifest.records[i].split).samples.push_back(std::move(samples[i]));
  return out;
}

namespace {

std::vector<std::string> cells_of(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

/// Reads a CSV body (header skipped) into rows of doubles keyed by the first column.
std::vector<std::vector<double>> read_numeric_csv(const fs::path& path, std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = cells_of(line);
    if (c.size() != columns) throw IoError("malformed row in " + path.string() + ": " + line);
    std::vector<double> v;
    for (const auto& s : c) v.push_back(std::stod(s));
    rows.push_back(std::move(v));
  }
  return rows;
}

void save_split(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "images.f32", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "images.f32").string());
    const std::int32_t header[2] = {static_cast<std::int32_t>(d.samples.size()), kNetworkSide};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    for (const auto& s : d.samples) {
      const auto px = s.s2.image.pixels();
      out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write in " + dir.string());
  }
  std::ofstream labels(dir / "labels.csv"), records(dir / "records.csv"), truth(dir / "truth.csv");
  if (!labels || !records || !truth) throw IoError("cannot write split tables in " + dir.string());
  for (auto* s : {&labels, &records, &truth}) *s << std::setprecision(17);
  labels << "id,cob_u,cob_v,cof_u,cof_v,delta_u,delta_v,range,x,y,z,azimuth_deg,elevation_deg\n";
  records << "id,box_u,box_v,box_w,box_h,threshold_bin,cob_u,cob_v,gamma,alpha_u,alpha_v,noise,seed\n";
  truth << "id,pw_x,pw_y,pw_z,pas_x,pas_y,pas_z,az_w,el_w,az_as,el_as,range,cob_u,cob_v,cof_u,cof_v,q_w,q_x,q_y,"
           "q_z,phase\n";
  for (const auto& s : d.samples) {
    const LabelSet& l = s.s2.labels;
    labels << s.id << ',' << l.cob.x() << ',' << l.cob.y() << ',' << l.cof.x() << ',' << l.cof.y() << ','
           << l.delta.x() << ',' << l.delta.y() << ',' << l.range << ',' << l.position.x() << ',' << l.position.y()
           << ',' << l.position.z() << ',' << l.azimuth_deg << ',' << l.elevation_deg << '\n';
    const PreprocessRecord& r = s.s2.record;
    const BoundingBox& b = r.blob.box;
    // Seeds are full 64-bit values; they are stored as text and parsed separately.
    records << s.id << ',' << b.u << ',' << b.v << ',' << b.width << ',' << b.height << ',' << r.blob.threshold.bin
            << ',' << r.blob.cob.x() << ',' << r.blob.cob.y() << ',' << r.gamma << ',' << r.alpha_u << ','
            << r.alpha_v << ',' << (r.noise_applied ? 1 : 0) << ',' << r.seed << '\n';
    const GroundTruth& t = s.truth;
    truth << s.id << ',' << t.position_w.x() << ',' << t.position_w.y() << ',' << t.position_w.z() << ','
          << t.position_as.x() << ',' << t.position_as.y() << ',' << t.position_as.z() << ',' << t.azimuth_w_deg
          << ',' << t.elevation_w_deg << ',' << t.azimuth_as_deg << ',' << t.elevation_as_deg << ',' << t.range_km
          << ',' << t.cob.x() << ',' << t.cob.y() << ',' << t.cof.x() << ',' << t.cof.y() << ','
          << t.q_cam_to_w.w() << ',' << t.q_cam_to_w.x() << ',' << t.q_cam_to_w.y() << ',' << t.q_cam_to_w.z()
          << ',' << t.body_phase_deg << '\n';
  }
}

Dataset load_split(const fs::path& dir) {
  Dataset d;
  std::ifstream in(dir / "images.f32", std::ios::binary);
  if (!in) throw IoError("cannot read " + (dir / "images.f32").string());
  std::int32_t header[2];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in || header[0] < 0 || header[1] != kNetworkSide) throw IoError("bad image stack header in " + dir.string());
  d.samples.resize(static_cast<std::size_t>(header[0]));
  for (auto& s : d.samples) {
    s.s2.image = GrayImage(kNetworkSide, kNetworkSide);
    auto px = s.s2.image.pixels();
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size() * sizeof(float)));
  }
  if (!in) throw IoError("truncated image stack in " + dir.string());

  const auto labels = read_numeric_csv(dir / "labels.csv", 13);
  const auto truth = read_numeric_csv(dir / "truth.csv", 21);
  std::ifstream rec(dir / "records.csv");
  if (!rec) throw IoError("cannot open records.csv in " + dir.string());
  std::string line;
  std::getline(rec, line);
  std::vector<std::vector<std::string>> records;
  while (std::getline(rec, line))
    if (!line.empty()) records.push_back(cells_of(line));
  if (labels.size() != d.samples.size() || truth.size() != d.samples.size() || records.size() != d.samples.size())
    throw IoError("split tables in " + dir.string() + " disagree on the sample count");

  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    Sample& s = d.samples[i];
    const auto& l = labels[i];
    s.id = static_cast<std::size_t>(l[0]);
    LabelSet& ls = s.s2.labels;
    ls.cob = {l[1], l[2]};
    ls.cof = {l[3], l[4]};
    ls.delta = {l[5], l[6]};
    ls.range = l[7];
    ls.position = {l[8], l[9], l[10]};
    ls.azimuth_deg = l[11];
    ls.elevation_deg = l[12];

    const auto& r = records[i];
    if (r.size() != 13 || std::stoull(r[0]) != s.id) throw IoError("records.csv row " + std::to_string(i) + " mismatch");
    PreprocessRecord& pr = s.s2.record;
    pr.blob.box = {std::stoi(r[1]), std::stoi(r[2]), std::stoi(r[3]), std::stoi(r[4])};
    pr.blob.threshold.bin = std::stoi(r[5]);
    pr.blob.cob = {std::stod(r[6]), std::stod(r[7])};
    pr.gamma = std::stoi(r[8]);
    pr.alpha_u = std::stoi(r[9]);
    pr.alpha_v = std::stoi(r[10]);
    pr.noise_applied = r[11] == "1";
    pr.seed = std::stoull(r[12]);

    const auto& t = truth[i];
    if (static_cast<std::size_t>(t[0]) != s.id) throw IoError("truth.csv row " + std::to_string(i) + " mismatch");
    GroundTruth& g = s.truth;
    g.position_w = {t[1], t[2], t[3]};
    g.position_as = {t[4], t[5], t[6]};
    g.azimuth_w_deg = t[7];
    g.elevation_w_deg = t[8];
    g.azimuth_as_deg = t[9];
    g.elevation_as_deg = t[10];
    g.range_km = t[11];
    g.cob = {t[12], t[13]};
    g.cof = {t[14], t[15]};
    g.delta = g.cof - g.cob;
    g.q_cam_to_w = Eigen::Quaterniond(t[16], t[17], t[18], t[19]);
    g.body_phase_deg = t[20];
  }
  return d;
}

}  // namespace

void save_splits(const SplitSet& splits, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json j;
  const Dataset& first = splits.train;
  j["format_version"] = 1;
  j["id"] = first.id;
  j["body"] = first.body;
  j["strategy"] = to_string(first.strategy);
  j["camera"] = {{"fov_deg", first.camera.fov_deg()}, {"sensor_px", first.camera.sensor_px()}};
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    save_split(splits.get(sp), dir / std::string(to_string(sp)));
    j["splits"][std::string(to_string(sp))] = splits.get(sp).size();
  }
  std::ofstream out(dir / "dataset.json");
  if (!out) throw IoError("cannot write " + (dir / "dataset.json").string());
  out << j.dump(2) << '\n';
}

SplitSet load_splits(const fs::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw IoError("no dataset.json in " + dir.string());
  const auto j = nlohmann::json::parse(in);
  SplitSet out;
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    Dataset& d = out.get(sp);
    d = load_split(dir / std::string(to_string(sp)));
    d.id = j.at("id").get<std::string>();
    d.body = j.at("body").get<std::string>();
    d.strategy = parse_strategy(j.at("strategy").get<std::string>());
    d.camera = CameraModel(j.at("camera").at("fov_deg").get<double>(), j.at("camera").at("sensor_px").get<int>());
    for (auto& s : d.samples) s.s2.labels.strategy = d.strategy;
  }
  return out;
}

}  // namespace celmnav
