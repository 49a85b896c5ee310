#include "celmnav/navmetrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "celmnav/error.hpp"

namespace celmnav {

namespace fs = std::filesystem;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::array<MethodTag, 4> kMethods = {MethodTag::CELM, MethodTag::CNN, MethodTag::HCELM, MethodTag::HCELM3};
}  // namespace

std::string_view to_string(MethodTag m) {
  switch (m) {
    case MethodTag::CELM: return "CELM";
    case MethodTag::CNN: return "CNN";
    case MethodTag::HCELM: return "HCELM";
    case MethodTag::HCELM3: return "HCELM3";
  }
  return "?";
}

MethodTag parse_method(std::string_view text) {
  for (auto m : kMethods)
    if (text == to_string(m)) return m;
  throw Error("unknown method '" + std::string(text) + "'");
}

Vector3d spherical_to_cartesian(double azimuth_deg, double elevation_deg, double range) {
  const double az = azimuth_deg * kDeg, el = elevation_deg * kDeg;
  return {range * std::cos(el) * std::cos(az), range * std::cos(el) * std::sin(az), range * std::sin(el)};
}

PositionEstimate observables_to_position(const Vector2d& delta_s2, double range_s2, const PreprocessRecord& record,
                                         const CameraModel& camera, const Eigen::Quaterniond& q_cam_to_w) {
  const double up = 1.0 / record.scale();
  const Vector2d cof = record.blob.cob + delta_s2 * up;
  const double range = range_s2 * up;
  const Vector3d o_uv(cof.x(), cof.y(), 1.0);
  const Vector3d o_imp = camera.inverse_calibration() * o_uv;
  const Vector3d los = o_imp.normalized();
  const Vector3d body_cam = range * los;
  PositionEstimate est;
  est.frame = Frame::W;
  est.position = -(q_cam_to_w * body_cam);
  est.cof_s0 = cof;
  est.range_s0 = range;
  return est;
}

PositionEstimate reconstruct_position(const LabelSet& estimate_s2, const PreprocessRecord& record,
                                      const CameraModel& camera, const Eigen::Quaterniond& q_cam_to_w) {
  const LabelStrategy s = estimate_s2.strategy;
  if (s == LabelStrategy::DeltaRange)
    return observables_to_position(estimate_s2.delta, estimate_s2.range, record, camera, q_cam_to_w);
  const double up = 1.0 / record.scale();
  PositionEstimate est;
  est.frame = position_frame(s);
  if (is_cartesian(s)) {
    est.position = estimate_s2.position * up;
  } else {
    est.position = spherical_to_cartesian(estimate_s2.azimuth_deg, estimate_s2.elevation_deg, estimate_s2.range * up);
  }
  return est;
}

double position_error_percent(const Vector3d& eps_p, double true_range) {
  return eps_p.norm() / true_range * 100.0;
}

std::vector<MetricRow> compute_metrics(std::span<const PositionEstimate> estimates, std::span<const TruthSample> truths,
                                       LabelStrategy strategy) {
  if (estimates.size() != truths.size()) throw Error("estimate and truth counts differ");
  std::vector<MetricRow> rows;
  rows.reserve(estimates.size());
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const PositionEstimate& e = estimates[i];
    const GroundTruth& t = truths[i].truth;
    if (e.sample_id != truths[i].id)
      throw Error("sample id mismatch at row " + std::to_string(i) + ": estimate " + std::to_string(e.sample_id) +
                  " vs truth " + std::to_string(truths[i].id));
    MetricRow r;
    r.sample_id = e.sample_id;
    r.eps_p = e.position - t.position_in(e.frame);
    r.eps_n = position_error_percent(r.eps_p, t.range_km);
    const Vector3d eps_w = e.frame == Frame::AS ? Vector3d(as_to_w(t.body_phase_deg) * r.eps_p) : r.eps_p;
    r.eps_cam = t.q_cam_to_w.conjugate() * eps_w;
    if (strategy == LabelStrategy::DeltaRange && e.cof_s0 && e.range_s0) {
      r.eps_cof_u = t.cof.x() - e.cof_s0->x();
      r.eps_cof_v = t.cof.y() - e.cof_s0->y();
      r.eps_cof = std::hypot(*r.eps_cof_u, *r.eps_cof_v);
      r.eps_rho = *e.range_s0 - t.range_km;
    }
    rows.push_back(r);
  }
  return rows;
}

double mean_eps_n(std::span<const MetricRow> rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.eps_n;
  return s / static_cast<double>(rows.size());
}

FiveNumber five_number_summary(std::vector<double> v) {
  if (v.empty()) throw Error("summary of an empty sample");
  std::sort(v.begin(), v.end());
  const auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  FiveNumber f;
  f.min = v.front();
  f.q1 = q(0.25);
  f.median = q(0.5);
  f.q3 = q(0.75);
  f.max = v.back();
  f.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return f;
}

ErrorEllipse error_ellipse(std::span<const Vector2d> errors) {
  if (errors.size() < 2) throw Error("error ellipse needs at least two samples");
  ErrorEllipse e;
  for (const auto& x : errors) e.mean += x;
  e.mean /= static_cast<double>(errors.size());
  for (const auto& x : errors) e.covariance += (x - e.mean) * (x - e.mean).transpose();
  e.covariance /= static_cast<double>(errors.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(e.covariance);
  const Vector2d values = eig.eigenvalues().cwiseMax(0.0);  // ascending
  e.sigma_major = std::sqrt(values[1]);
  e.sigma_minor = std::sqrt(values[0]);
  const Vector2d major = eig.eigenvectors().col(1);
  e.angle_deg = std::atan2(major.y(), major.x()) / kDeg;
  return e;
}

std::vector<HistogramBin> histogram(std::span<const double> values, int bins) {
  if (bins < 1) throw Error("histogram needs at least one bin");
  std::vector<HistogramBin> out;
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi <= lo) hi = lo + 1.0;
  const double width = (hi - lo) / bins;
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (double x : values) {
    const int k = std::clamp(static_cast<int>((x - lo) / width), 0, bins - 1);
    counts[static_cast<std::size_t>(k)] += 1.0;
  }
  for (int k = 0; k < bins; ++k) {
    out.push_back({lo + k * width, lo + (k + 1) * width,
                   counts[static_cast<std::size_t>(k)] / (static_cast<double>(values.size()) * width)});
  }
  return out;
}

std::vector<ShareRow> best_method_shares(std::span<const MetricTable> tables) {
  std::map<std::string, std::vector<const MetricTable*>> by_dataset;
  for (const auto& t : tables) by_dataset[t.dataset_id].push_back(&t);
  std::vector<ShareRow> out;
  for (auto& [id, group] : by_dataset) {
    std::sort(group.begin(), group.end(), [](const MetricTable* a, const MetricTable* b) { return a->method < b->method; });
    std::map<std::size_t, std::pair<double, MethodTag>> best;
    for (const MetricTable* t : group) {
      for (const auto& r : t->rows) {
        auto it = best.find(r.sample_id);
        if (it == best.end() || r.eps_n < it->second.first) best[r.sample_id] = {r.eps_n, t->method};
      }
    }
    std::map<MethodTag, double> wins;
    for (const MetricTable* t : group) wins[t->method] = 0.0;
    for (const auto& [sid, v] : best) wins[v.second] += 1.0;
    for (const auto& [m, w] : wins)
      out.push_back({id, m, best.empty() ? 0.0 : 100.0 * w / static_cast<double>(best.size())});
  }
  return out;
}

namespace {

std::ofstream open_csv(const fs::path& path, std::string_view header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << std::setprecision(10) << header << '\n';
  return out;
}

}  // namespace

void emit_report(std::span<const MetricTable> tables, const fs::path& out_dir, int histogram_bins) {
  if (tables.empty()) throw Error("report needs at least one metric table");
  fs::create_directories(out_dir);

  auto quant = open_csv(out_dir / "quantiles.csv", "dataset,body,strategy,method,n,min,q1,median,q3,max,mean");
  auto means = open_csv(out_dir / "mean_matrix.csv", "body,strategy,method,mean_eps_n");
  auto cam = open_csv(out_dir / "cam_errors.csv", "dataset,method,mean_abs_x,mean_abs_y,mean_abs_z");
  nlohmann::json series;
  for (const auto& t : tables) {
    if (t.rows.empty()) continue;
    std::vector<double> eps;
    Vector3d cam_abs = Vector3d::Zero();
    for (const auto& r : t.rows) {
      eps.push_back(r.eps_n);
      cam_abs += r.eps_cam.cwiseAbs();
    }
    cam_abs /= static_cast<double>(t.rows.size());
    const FiveNumber f = five_number_summary(eps);
    quant << t.dataset_id << ',' << t.body << ',' << to_string(t.strategy) << ',' << to_string(t.method) << ','
          << t.rows.size() << ',' << f.min << ',' << f.q1 << ',' << f.median << ',' << f.q3 << ',' << f.max << ','
          << f.mean << '\n';
    means << t.body << ',' << to_string(t.strategy) << ',' << to_string(t.method) << ',' << f.mean << '\n';
    cam << t.dataset_id << ',' << to_string(t.method) << ',' << cam_abs.x() << ',' << cam_abs.y() << ','
        << cam_abs.z() << '\n';
    series["eps_n"][t.dataset_id][std::string(to_string(t.method))] = eps;
  }

  auto share = open_csv(out_dir / "best_share.csv", "dataset,method,share_percent");
  for (const auto& s : best_method_shares(tables))
    share << s.dataset_id << ',' << to_string(s.method) << ',' << s.share_percent << '\n';

  auto hcof = open_csv(out_dir / "hist_cof.csv", "dataset,method,bin_lo,bin_hi,density");
  auto hrho = open_csv(out_dir / "hist_rho.csv", "dataset,method,bin_lo,bin_hi,density");
  auto ell = open_csv(out_dir / "ellipses.csv",
                      "dataset,method,mean_u,mean_v,cov_uu,cov_uv,cov_vv,sigma_major,sigma_minor,angle_deg,"
                      "major_2sigma,minor_2sigma");
  for (const auto& t : tables) {
    if (t.strategy != LabelStrategy::DeltaRange) continue;
    std::vector<double> cof, rho;
    std::vector<Vector2d> uv;
    for (const auto& r : t.rows) {
      if (!r.eps_cof) continue;
      cof.push_back(*r.eps_cof);
      rho.push_back(*r.eps_rho);
      uv.emplace_back(*r.eps_cof_u, *r.eps_cof_v);
    }
    for (const auto& b : histogram(cof, histogram_bins))
      hcof << t.dataset_id << ',' << to_string(t.method) << ',' << b.lo << ',' << b.hi << ',' << b.density << '\n';
    for (const auto& b : histogram(rho, histogram_bins))
      hrho << t.dataset_id << ',' << to_string(t.method) << ',' << b.lo << ',' << b.hi << ',' << b.density << '\n';
    if (uv.size() >= 2) {
      const ErrorEllipse e = error_ellipse(uv);
      ell << t.dataset_id << ',' << to_string(t.method) << ',' << e.mean.x() << ',' << e.mean.y() << ','
          << e.covariance(0, 0) << ',' << e.covariance(0, 1) << ',' << e.covariance(1, 1) << ',' << e.sigma_major
          << ',' << e.sigma_minor << ',' << e.angle_deg << ',' << 2.0 * e.sigma_major << ',' << 2.0 * e.sigma_minor
          << '\n';
      series["cof_errors"][t.dataset_id][std::string(to_string(t.method))] = {{"u", std::vector<double>{}},
                                                                              {"v", std::vector<double>{}}};
      auto& js = series["cof_errors"][t.dataset_id][std::string(to_string(t.method))];
      for (const auto& p : uv) {
        js["u"].push_back(p.x());
        js["v"].push_back(p.y());
      }
    }
  }
  std::ofstream js(out_dir / "series.json");
  if (!js) throw IoError("cannot write series.json");
  js << series.dump(1) << '\n';
}

void write_metric_rows(const MetricTable& table, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << std::setprecision(17);
  out << "# dataset=" << table.dataset_id << " body=" << table.body << " strategy=" << to_string(table.strategy)
      << " method=" << to_string(table.method) << '\n';
  out << "sample_id,eps_px,eps_py,eps_pz,eps_n,eps_cam_x,eps_cam_y,eps_cam_z,eps_cof_u,eps_cof_v,eps_cof,eps_rho\n";
  const auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& r : table.rows) {
    out << r.sample_id << ',' << r.eps_p.x() << ',' << r.eps_p.y() << ',' << r.eps_p.z() << ',' << r.eps_n << ','
        << r.eps_cam.x() << ',' << r.eps_cam.y() << ',' << r.eps_cam.z() << ',' << opt(r.eps_cof_u) << ','
        << opt(r.eps_cof_v) << ',' << opt(r.eps_cof) << ',' << opt(r.eps_rho) << '\n';
  }
}

MetricTable read_metric_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  MetricTable t;
  std::string line;
  std::getline(in, line);
  if (line.rfind("# ", 0) != 0) throw IoError("missing metric header in " + path.string());
  std::istringstream meta(line.substr(2));
  std::string kv;
  while (meta >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "dataset") t.dataset_id = value;
    if (key == "body") t.body = value;
    if (key == "strategy") t.strategy = parse_strategy(value);
    if (key == "method") t.method = parse_method(value);
  }
  std::getline(in, line);  // column header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(12);
    MetricRow r;
    r.sample_id = std::stoull(cells[0]);
    r.eps_p = {std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])};
    r.eps_n = std::stod(cells[4]);
    r.eps_cam = {std::stod(cells[5]), std::stod(cells[6]), std::stod(cells[7])};
    const auto opt = [](const std::string& c) { return c.empty() ? std::optional<double>{} : std::stod(c); };
    r.eps_cof_u = opt(cells[8]);
    r.eps_cof_v = opt(cells[9]);
    r.eps_cof = opt(cells[10]);
    r.eps_rho = opt(cells[11]);
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace celmnav
