#include "comofusion/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "comofusion/dataset.hpp"
#include "comofusion/errors.hpp"
#include "comofusion/image_io.hpp"

namespace comofusion {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

GrayImage bytes(const GrayImage& img) { return to_byte_range(img); }

double sigmoid_term(double gamma, double k, double sigma, double v) {
  return gamma / (1.0 + std::exp(k * (v - sigma)));
}

double orientation(double gx, double gy) {
  if (gx == 0.0) return std::numbers::pi / 2.0;
  return std::atan(gy / gx);
}

double strength_ratio(double ga, double gf) {
  if (ga == gf) return 1.0;
  return ga > gf ? gf / ga : ga / gf;
}

// Valid-mode separable Gaussian filtering.
std::vector<double> gaussian_kernel() {
  std::vector<double> k(kSsimWindow);
  const int r = kSsimWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    k[i] = std::exp(-static_cast<double>((i - r) * (i - r)) / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += k[j] * src[static_cast<std::size_t>(y) * w + x + j];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += k[j] * tmp[static_cast<std::size_t>(y + j) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

double entropy(const GrayImage& img) {
  const GrayImage b = bytes(img);
  if (b.size() == 0) throw ValidationError("entropy: empty image");
  std::array<std::size_t, 256> hist{};
  for (double v : b.data()) {
    const long level = std::lround(std::clamp(v, 0.0, 255.0));
    ++hist[static_cast<std::size_t>(level)];
  }
  const double total = static_cast<double>(b.size());
  double h = 0.0;
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

double spatial_frequency(const GrayImage& img) {
  require_min_size(img, 2, "spatial_frequency");
  const GrayImage b = bytes(img);
  const int h = b.height();
  const int w = b.width();
  double rf = 0.0;
  double cf = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 1; x < w; ++x) {
      const double d = b.at(y, x) - b.at(y, x - 1);
      rf += d * d;
    }
  for (int y = 1; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = b.at(y, x) - b.at(y - 1, x);
      cf += d * d;
    }
  rf /= static_cast<double>(h) * (w - 1);
  cf /= static_cast<double>(h - 1) * w;
  return std::sqrt(rf + cf);
}

double average_gradient(const GrayImage& img) {
  require_min_size(img, 2, "average_gradient");
  const GrayImage b = bytes(img);
  double acc = 0.0;
  for (int y = 0; y + 1 < b.height(); ++y)
    for (int x = 0; x + 1 < b.width(); ++x) {
      const double dx = b.at(y, x + 1) - b.at(y, x);
      const double dy = b.at(y + 1, x) - b.at(y, x);
      acc += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return acc / (static_cast<double>(b.height() - 1) * (b.width() - 1));
}

double std_dev(const GrayImage& img) {
  const GrayImage b = bytes(img);
  if (b.size() == 0) throw ValidationError("std_dev: empty image");
  double mean = 0.0;
  for (double v : b.data()) mean += v;
  mean /= static_cast<double>(b.size());
  double var = 0.0;
  for (double v : b.data()) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(b.size()));
}

double qabf(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused,
            const QabfParams& p) {
  require_same_shape(vis, ir, "qabf");
  require_same_shape(vis, fused, "qabf");
  require_min_size(vis, 3, "qabf");
  const GradientField ga = sobel(bytes(vis));
  const GradientField gb = sobel(bytes(ir));
  const GradientField gf = sobel(bytes(fused));

  const double norm_g = p.normalize ? sigmoid_term(p.gamma_g, p.k_g, p.sigma_g, 1.0) : 1.0;
  const double norm_a = p.normalize ? sigmoid_term(p.gamma_a, p.k_a, p.sigma_a, 1.0) : 1.0;
  auto preservation = [&](const GradientField& src, std::size_t k) {
    const double g = strength_ratio(src.magnitude[k], gf.magnitude[k]);
    const double da = std::abs(orientation(src.gx[k], src.gy[k]) - orientation(gf.gx[k], gf.gy[k]));
    const double a = 1.0 - da / (std::numbers::pi / 2.0);
    return sigmoid_term(p.gamma_g, p.k_g, p.sigma_g, g) / norm_g *
           sigmoid_term(p.gamma_a, p.k_a, p.sigma_a, a) / norm_a;
  };

  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < ga.magnitude.size(); ++k) {
    const double wa = ga.magnitude[k];
    const double wb = gb.magnitude[k];
    num += preservation(ga, k) * wa + preservation(gb, k) * wb;
    den += wa + wb;
  }
  if (den == 0.0) return 1.0;
  return std::clamp(num / den, 0.0, 1.0);
}

double ssim(const GrayImage& a, const GrayImage& b) {
  require_same_shape(a, b, "ssim");
  require_min_size(a, kSsimWindow, "ssim");
  const GrayImage x = bytes(a);
  const GrayImage y = bytes(b);
  const int h = x.height();
  const int w = x.width();
  const std::size_t n = x.size();
  std::vector<double> xv(x.data().begin(), x.data().end());
  std::vector<double> yv(y.data().begin(), y.data().end());
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t k = 0; k < n; ++k) {
    xx[k] = xv[k] * xv[k];
    yy[k] = yv[k] * yv[k];
    xy[k] = xv[k] * yv[k];
  }
  const auto kern = gaussian_kernel();
  const auto mx = filter_valid(xv, h, w, kern);
  const auto my = filter_valid(yv, h, w, kern);
  const auto sxx = filter_valid(xx, h, w, kern);
  const auto syy = filter_valid(yy, h, w, kern);
  const auto sxy = filter_valid(xy, h, w, kern);
  double acc = 0.0;
  for (std::size_t k = 0; k < mx.size(); ++k) {
    const double vx = sxx[k] - mx[k] * mx[k];
    const double vy = syy[k] - my[k] * my[k];
    const double cxy = sxy[k] - mx[k] * my[k];
    acc += ((2.0 * mx[k] * my[k] + kC1) * (2.0 * cxy + kC2)) /
           ((mx[k] * mx[k] + my[k] * my[k] + kC1) * (vx + vy + kC2));
  }
  return acc / static_cast<double>(mx.size());
}

double ssim_fusion(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused) {
  return 0.5 * (ssim(fused, vis) + ssim(fused, ir));
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::en: return "en";
    case Metric::sf: return "sf";
    case Metric::ag: return "ag";
    case Metric::sd: return "sd";
    case Metric::qabf: return "qabf";
    case Metric::ssim: return "ssim";
  }
  return "?";
}

double MetricValues::get(Metric m) const { return const_cast<MetricValues*>(this)->get(m); }

double& MetricValues::get(Metric m) {
  switch (m) {
    case Metric::en: return en;
    case Metric::sf: return sf;
    case Metric::ag: return ag;
    case Metric::sd: return sd;
    case Metric::qabf: return qabf;
    case Metric::ssim: return ssim;
  }
  throw ValidationError("unknown metric");
}

MetricValues compute_metrics(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused) {
  MetricValues v;
  v.en = entropy(fused);
  v.sf = spatial_frequency(fused);
  v.ag = average_gradient(fused);
  v.sd = std_dev(fused);
  v.qabf = qabf(vis, ir, fused);
  v.ssim = ssim_fusion(vis, ir, fused);
  return v;
}

bool better(const MetricValues& a, const MetricValues& b, Metric m) { return a.get(m) > b.get(m); }

int wins(const MetricValues& a, const MetricValues& b) {
  int n = 0;
  for (Metric m : kAllMetrics) n += better(a, b, m) ? 1 : 0;
  return n;
}

std::vector<std::string> rank_methods(
    const std::vector<std::pair<std::string, MetricValues>>& results, Metric m) {
  std::vector<std::size_t> order(results.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return better(results[i].second, results[j].second, m);
  });
  std::vector<std::string> names;
  for (std::size_t k : order) names.push_back(results[k].first);
  return names;
}

void check_bounds(const MetricValues& v) {
  auto fail = [](std::string_view what, double value) {
    throw ValidationError(std::string(what) + " out of bounds: " + std::to_string(value));
  };
  for (Metric m : kAllMetrics)
    if (!std::isfinite(v.get(m))) fail(to_string(m), v.get(m));
  if (v.en < 0.0 || v.en > 8.0) fail("en", v.en);
  if (v.qabf < 0.0 || v.qabf > 1.0) fail("qabf", v.qabf);
  if (v.ssim < -1.0 || v.ssim > 1.0) fail("ssim", v.ssim);
  if (v.sf < 0.0) fail("sf", v.sf);
  if (v.ag < 0.0) fail("ag", v.ag);
  if (v.sd < 0.0) fail("sd", v.sd);
}

MetricsReport evaluate(const std::filesystem::path& fused_dir, const std::filesystem::path& vis_dir,
                       const std::filesystem::path& ir_dir) {
  MetricsReport report;
  report.dataset = vis_dir.parent_path().filename().string();
  report.method = fused_dir.filename().string();
  report.timestamp = utc_timestamp();

  std::map<std::string, std::filesystem::path> vis_files;
  std::map<std::string, std::filesystem::path> ir_files;
  for (const auto& p : list_images(vis_dir)) vis_files.emplace(p.filename().string(), p);
  for (const auto& p : list_images(ir_dir)) ir_files.emplace(p.filename().string(), p);

  for (const auto& fused_path : list_images(fused_dir)) {
    const std::string name = fused_path.filename().string();
    const auto v = vis_files.find(name);
    const auto i = ir_files.find(name);
    if (v == vis_files.end() || i == ir_files.end()) {
      report.errors.push_back(name + ": no matching " +
                              (v == vis_files.end() ? std::string("visible") : std::string("infrared")) +
                              " image");
      continue;
    }
    try {
      const GrayImage fused = load_gray(fused_path);
      const GrayImage vis = load_gray(v->second);
      const GrayImage ir = load_gray(i->second);
      report.records.push_back({name, compute_metrics(vis, ir, fused)});
    } catch (const std::exception& e) {
      report.errors.push_back(name + ": " + e.what());
    }
  }
  std::sort(report.records.begin(), report.records.end(),
            [](const MetricRecord& a, const MetricRecord& b) { return a.name < b.name; });
  if (!report.records.empty()) {
    for (const auto& r : report.records)
      for (Metric m : kAllMetrics) report.aggregate.get(m) += r.values.get(m);
    for (Metric m : kAllMetrics) report.aggregate.get(m) /= static_cast<double>(report.records.size());
  }
  return report;
}

namespace {

nlohmann::json values_json(const MetricValues& v) {
  nlohmann::json j;
  for (Metric m : kAllMetrics) j[std::string(to_string(m))] = v.get(m);
  return j;
}

MetricValues values_from(const nlohmann::json& j) {
  MetricValues v;
  for (Metric m : kAllMetrics) v.get(m) = j.at(std::string(to_string(m))).get<double>();
  return v;
}

}  // namespace

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records) {
    nlohmann::json rec = values_json(r.values);
    rec["name"] = r.name;
    records.push_back(rec);
  }
  return {{"meta",
           {{"dataset", report.dataset},
            {"method", report.method},
            {"timestamp", report.timestamp}}},
          {"records", records},
          {"aggregate", report.records.empty() ? nlohmann::json(nullptr) : values_json(report.aggregate)},
          {"errors", report.errors}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.dataset = j.at("meta").at("dataset").get<std::string>();
  r.method = j.at("meta").at("method").get<std::string>();
  r.timestamp = j.at("meta").at("timestamp").get<std::string>();
  for (const auto& rec : j.at("records")) r.records.push_back({rec.at("name").get<std::string>(), values_from(rec)});
  if (!j.at("aggregate").is_null()) r.aggregate = values_from(j.at("aggregate"));
  if (j.contains("errors")) r.errors = j.at("errors").get<std::vector<std::string>>();
  return r;
}

std::string to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << std::setprecision(17) << "name";
  for (Metric m : kAllMetrics) os << ',' << to_string(m);
  os << '\n';
  auto row = [&](const std::string& name, const MetricValues& v) {
    os << name;
    for (Metric m : kAllMetrics) os << ',' << v.get(m);
    os << '\n';
  };
  for (const auto& r : report.records) row(r.name, r.values);
  if (!report.records.empty()) row("mean", report.aggregate);
  return os.str();
}

}  // namespace comofusion
