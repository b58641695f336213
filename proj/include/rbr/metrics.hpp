#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rbr/error.hpp"

namespace rbr {

struct DistancePair {
  double truth = 0.0;
  double predicted = 0.0;
};

struct EvalReport {
  double ard = 0.0;
  double srd = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t n = 0;
  std::vector<DistancePair> pairs;

  /// Metric values in report column order.
  std::array<double, 7> values() const { return {ard, srd, rmse, rmse_log, delta1, delta2, delta3}; }
};

inline constexpr std::array<const char*, 7> kMetricNames = {"ARD", "SRD", "RMSE", "RMSE_log",
                                                            "delta1", "delta2", "delta3"};

inline constexpr double kPredictionFloor = 1e-6;

/// Threshold accuracy uses strict "< t" for t = 1.25, 1.25², 1.25³; logs are natural.
inline EvalReport evaluate(std::vector<DistancePair> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "evaluate needs at least one pair");
  EvalReport rep;
  rep.n = pairs.size();
  double ard = 0.0, srd = 0.0, se = 0.0, sle = 0.0;
  std::size_t hit1 = 0, hit2 = 0, hit3 = 0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (const auto& p : pairs) {
    if (!(p.truth > 0.0) || !std::isfinite(p.truth))
      throw Error(ErrorCode::NonPositiveGroundTruth, "ground-truth distance must be positive");
    const double d = p.truth;
    const double dh = std::max(p.predicted, kPredictionFloor);
    const double err = dh - d;
    ard += std::abs(err) / d;
    srd += err * err / d;
    se += err * err;
    const double le = std::log(dh) - std::log(d);
    sle += le * le;
    const double ratio = std::max(dh / d, d / dh);
    hit1 += ratio < t1;
    hit2 += ratio < t2;
    hit3 += ratio < t3;
  }
  const double n = static_cast<double>(pairs.size());
  rep.ard = ard / n;
  rep.srd = srd / n;
  rep.rmse = std::sqrt(se / n);
  rep.rmse_log = std::sqrt(sle / n);
  rep.delta1 = static_cast<double>(hit1) / n;
  rep.delta2 = static_cast<double>(hit2) / n;
  rep.delta3 = static_cast<double>(hit3) / n;
  rep.pairs = std::move(pairs);
  return rep;
}

// ----------------------------------------------------------------------
// Report emission
// ----------------------------------------------------------------------

inline std::string report_csv_header() { return "method,ARD,SRD,RMSE,RMSE_log,delta1,delta2,delta3"; }

inline std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string report_csv_row(const std::string& method, const EvalReport& rep) {
  std::string row = method;
  for (double v : rep.values()) row += "," + format_metric(v);
  return row;
}

inline nlohmann::json report_json(const std::string& method, const EvalReport& rep) {
  nlohmann::json j;
  j["method"] = method;
  const auto vals = rep.values();
  for (std::size_t i = 0; i < vals.size(); ++i) j[kMetricNames[i]] = vals[i];
  j["n"] = rep.n;
  auto& arr = j["pairs"] = nlohmann::json::array();
  for (const auto& p : rep.pairs) arr.push_back({p.truth, p.predicted});
  return j;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Sample standard deviation (n − 1 denominator); zero for a single run.
inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw Error(ErrorCode::EmptyInput, "mean_std of no values");
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

inline std::string summary_csv_header() {
  std::string h = "method,runs";
  for (const char* name : kMetricNames) h += std::string(",") + name + "," + name + "_std";
  return h;
}

/// One summary row: mean and standard deviation of every metric across runs.
inline std::string summary_csv_row(const std::string& method, const std::vector<EvalReport>& runs) {
  std::string row = method + "," + std::to_string(runs.size());
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    std::vector<double> xs;
    for (const auto& r : runs) xs.push_back(r.values()[k]);
    const MeanStd ms = mean_std(xs);
    row += "," + format_metric(ms.mean) + "," + format_metric(ms.std);
  }
  return row;
}

}  // namespace rbr
