#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdsm/errors.hpp"
#include "gdsm/volume.hpp"

namespace gdsm {

namespace detail {
inline void check_pair(std::span<const double> pred, std::span<const double> actual) {
    if (pred.size() != actual.size())
        throw LengthMismatch("prediction/target length mismatch: " + std::to_string(pred.size()) +
                             " vs " + std::to_string(actual.size()));
    if (pred.empty()) throw EmptyInput("metrics need at least one pair");
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (!std::isfinite(pred[i]) || !std::isfinite(actual[i]))
            throw NonFiniteInput("metrics received non-finite values");
}

inline double mean_of(std::span<const double> xs) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}
}  // namespace detail

inline double mae(std::span<const double> pred, std::span<const double> actual) {
    detail::check_pair(pred, actual);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - actual[i]);
    return acc / static_cast<double>(pred.size());
}

inline double mse(std::span<const double> pred, std::span<const double> actual) {
    detail::check_pair(pred, actual);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - actual[i];
        acc += e * e;
    }
    return acc / static_cast<double>(pred.size());
}

inline double rmse(std::span<const double> pred, std::span<const double> actual) {
    return std::sqrt(mse(pred, actual));
}

// Coefficient of determination, 1 - SS_res/SS_tot with SS_tot about the mean
// of the actual ages.
inline double r_squared(std::span<const double> pred, std::span<const double> actual) {
    detail::check_pair(pred, actual);
    if (pred.size() < 2) throw TooFewRows("r_squared needs n >= 2");
    const double mean_actual = detail::mean_of(actual);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ss_res += (actual[i] - pred[i]) * (actual[i] - pred[i]);
        ss_tot += (actual[i] - mean_actual) * (actual[i] - mean_actual);
    }
    if (ss_tot == 0.0) throw ConstantTargets("r_squared undefined for constant targets");
    return 1.0 - ss_res / ss_tot;
}

inline double pearson_r(std::span<const double> pred, std::span<const double> actual) {
    detail::check_pair(pred, actual);
    if (pred.size() < 2) throw TooFewRows("pearson_r needs n >= 2");
    const double mp = detail::mean_of(pred);
    const double ma = detail::mean_of(actual);
    double num = 0.0, dp = 0.0, da = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double a = pred[i] - mp;
        const double b = actual[i] - ma;
        num += a * b;
        dp += a * a;
        da += b * b;
    }
    if (dp == 0.0 || da == 0.0) throw ConstantVector("pearson_r undefined for constant input");
    return num / std::sqrt(dp * da);
}

struct MetricsReport {
    double mae = 0.0;
    double mse = 0.0;
    double rmse = 0.0;
    double r_squared = 0.0;
    double pearson_r = 0.0;
    long n = 0;
};

inline MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> actual) {
    MetricsReport r;
    r.mae = mae(pred, actual);
    r.mse = mse(pred, actual);
    r.rmse = std::sqrt(r.mse);
    r.r_squared = r_squared(pred, actual);
    r.pearson_r = pearson_r(pred, actual);
    r.n = static_cast<long>(pred.size());
    return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
    return {{"mae", r.mae},      {"mse", r.mse},           {"rmse", r.rmse},
            {"r_squared", r.r_squared}, {"pearson_r", r.pearson_r}, {"n", r.n}};
}

// Fixed-width text rendering for terminal output and the .txt report.
inline std::string metrics_to_table(const MetricsReport& r, const std::string& title) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%-28s %10s\n"
                  "  MAE  (years)              %10.4f\n"
                  "  MSE  (years^2)            %10.4f\n"
                  "  RMSE (years)              %10.4f\n"
                  "  R^2                       %10.4f\n"
                  "  Pearson r                 %10.4f\n"
                  "  n                         %10ld\n",
                  title.c_str(), "", r.mae, r.mse, r.rmse, r.r_squared, r.pearson_r, r.n);
    return buf;
}

// One row of the per-slice loss report (CSV: plane, slice_index, mae).
struct PerSliceLoss {
    Plane plane = Plane::axial;
    int slice_index = 0;
    double mae = 0.0;
};

inline std::string per_slice_csv(const std::vector<PerSliceLoss>& rows) {
    std::string out = "plane,slice_index,validation_mae\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.6f\n", plane_name(r.plane), r.slice_index, r.mae);
        out += buf;
    }
    return out;
}

}  // namespace gdsm
