#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "comofusion/imgcore.hpp"

namespace comofusion {

// Every metric converts its inputs to byte range [0, 255] first; byte-tagged
// images pass through unchanged.

/// Base-2 entropy of the 256-bin histogram of rounded, clamped intensities.
double entropy(const GrayImage& img);
/// sqrt(RF^2 + CF^2) from mean squared horizontal/vertical neighbour differences.
double spatial_frequency(const GrayImage& img);
/// Mean of sqrt((dx^2 + dy^2) / 2) over the (H-1)x(W-1) forward-difference grid.
double average_gradient(const GrayImage& img);
/// Population standard deviation.
double std_dev(const GrayImage& img);

struct QabfParams {
  double gamma_g = 0.9994;
  double k_g = -15.0;
  double sigma_g = 0.5;
  double gamma_a = 0.9879;
  double k_a = -22.0;
  double sigma_a = 0.8;
  /// Divide each sigmoid by its value at perfect preservation so that a
  /// fused image identical to both sources scores exactly 1.
  bool normalize = true;
};

/// Edge-preservation score in [0, 1]. Images with no source edges score 1.
double qabf(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused,
            const QabfParams& params = {});

/// Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows.
double ssim(const GrayImage& a, const GrayImage& b);
/// (SSIM(fused, vis) + SSIM(fused, ir)) / 2.
double ssim_fusion(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused);

enum class Metric { en, sf, ag, sd, qabf, ssim };
inline constexpr std::array<Metric, 6> kAllMetrics = {Metric::en, Metric::sf, Metric::ag,
                                                      Metric::sd, Metric::qabf, Metric::ssim};
std::string_view to_string(Metric m);

struct MetricValues {
  double en = 0.0;
  double sf = 0.0;
  double ag = 0.0;
  double sd = 0.0;
  double qabf = 0.0;
  double ssim = 0.0;

  double get(Metric m) const;
  double& get(Metric m);
};

MetricValues compute_metrics(const GrayImage& vis, const GrayImage& ir, const GrayImage& fused);

/// All six metrics are higher-is-better. Returns true when a scores strictly
/// higher than b on metric m.
bool better(const MetricValues& a, const MetricValues& b, Metric m);
/// Number of metrics on which a beats b.
int wins(const MetricValues& a, const MetricValues& b);

/// Names of methods ordered best-first on metric m (ties keep input order).
std::vector<std::string> rank_methods(
    const std::vector<std::pair<std::string, MetricValues>>& results, Metric m);

/// Throws ValidationError if any value violates its documented bound.
void check_bounds(const MetricValues& v);

struct MetricRecord {
  std::string name;
  MetricValues values;
};

struct MetricsReport {
  std::string dataset;
  std::string method;
  std::string timestamp;
  std::vector<MetricRecord> records;  ///< sorted by name
  MetricValues aggregate;             ///< mean of records
  std::vector<std::string> errors;
};

/// Pairs fused images with vis/ir by filename. Unmatched or unreadable files
/// become per-file errors; the report still covers every matched triple.
MetricsReport evaluate(const std::filesystem::path& fused_dir, const std::filesystem::path& vis_dir,
                       const std::filesystem::path& ir_dir);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
std::string to_csv(const MetricsReport& report);

}  // namespace comofusion
