#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gdsm/errors.hpp"
#include "gdsm/rng.hpp"

namespace gdsm {

enum class RegressorKind : int { linear = 0, support_vector = 1, random_forest = 2 };

inline const char* regressor_kind_name(RegressorKind k) {
    switch (k) {
        case RegressorKind::linear: return "linear";
        case RegressorKind::support_vector: return "support_vector";
        default: return "random_forest";
    }
}

struct RegressorParams {
    double svr_c = 1.0;
    double svr_epsilon = 0.1;
    double svr_gamma = 0.0;  // <= 0 selects 1 / (d * var(X))
    int forest_trees = 100;
    int forest_min_leaf = 2;
    std::uint64_t seed = 0;
};

// Small dense feature matrix, row-major n x d.
struct FeatureMatrix {
    std::size_t n = 0, d = 0;
    std::vector<double> v;

    double at(std::size_t r, std::size_t c) const { return v[r * d + c]; }
    std::span<const double> row(std::size_t r) const { return {v.data() + r * d, d}; }
};

class Regressor {
public:
    virtual ~Regressor() = default;
    virtual void fit(const FeatureMatrix& x, std::span<const double> y) = 0;
    virtual double predict(std::span<const double> row) const = 0;
    bool fitted() const { return fitted_; }

protected:
    bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Ordinary least squares with intercept.
// ---------------------------------------------------------------------------

class LinearRegressor final : public Regressor {
public:
    void fit(const FeatureMatrix& x, std::span<const double> y) override {
        if (x.n == 0 || x.n != y.size()) throw LengthMismatch("linear regressor: bad training shape");
        Eigen::MatrixXd A(x.n, x.d + 1);
        Eigen::VectorXd b(x.n);
        for (std::size_t r = 0; r < x.n; ++r) {
            for (std::size_t c = 0; c < x.d; ++c) A(r, c) = x.at(r, c);
            A(r, x.d) = 1.0;
            b(r) = y[r];
        }
        const Eigen::VectorXd w = A.colPivHouseholderQr().solve(b);
        coef_.assign(w.data(), w.data() + x.d);
        intercept_ = w(x.d);
        fitted_ = true;
    }

    double predict(std::span<const double> row) const override {
        double acc = intercept_;
        for (std::size_t c = 0; c < coef_.size(); ++c) acc += coef_[c] * row[c];
        return acc;
    }

private:
    std::vector<double> coef_;
    double intercept_ = 0.0;
};

// ---------------------------------------------------------------------------
// Epsilon-SVR with an RBF kernel, solved by exact pairwise coordinate
// descent on the dual: minimize 1/2 b'Kb - y'b + eps*|b|_1 over b in
// [-C, C]^n with sum(b) = 0. Each accepted pair update is the exact minimum
// of the piecewise quadratic along the feasible segment.
// ---------------------------------------------------------------------------

class SvrRegressor final : public Regressor {
public:
    explicit SvrRegressor(const RegressorParams& p) : params_(p) {}

    void fit(const FeatureMatrix& x, std::span<const double> y) override {
        if (x.n == 0 || x.n != y.size()) throw LengthMismatch("svr: bad training shape");
        const std::size_t n = x.n;
        x_ = x;
        gamma_ = params_.svr_gamma;
        if (gamma_ <= 0.0) gamma_ = 1.0 / (static_cast<double>(std::max<std::size_t>(1, x.d)) *
                                           std::max(1e-12, feature_variance(x)));

        std::vector<double> K(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j)
                K[i * n + j] = K[j * n + i] = kernel(x.row(i), x.row(j));

        beta_.assign(n, 0.0);
        std::vector<double> g(n, 0.0);  // K * beta
        const double C = params_.svr_c;
        const double eps = params_.svr_epsilon;
        const double tol = 1e-8;

        const int max_passes = 400;
        for (int pass = 0; pass < max_passes; ++pass) {
            double improved = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    const double eta = K[i * n + i] + K[j * n + j] - 2.0 * K[i * n + j];
                    const double s0 = (g[i] - y[i]) - (g[j] - y[j]);
                    const double lo = std::max(-C - beta_[i], beta_[j] - C);
                    const double hi = std::min(C - beta_[i], beta_[j] + C);
                    if (hi - lo < tol) continue;

                    double best_delta = 0.0, best_gain = -tol;
                    auto consider = [&](double delta) {
                        delta = std::clamp(delta, lo, hi);
                        const double df = s0 * delta + 0.5 * eta * delta * delta +
                                          eps * (std::abs(beta_[i] + delta) - std::abs(beta_[i])) +
                                          eps * (std::abs(beta_[j] - delta) - std::abs(beta_[j]));
                        if (df < best_gain) {
                            best_gain = df;
                            best_delta = delta;
                        }
                    };
                    consider(lo);
                    consider(hi);
                    consider(-beta_[i]);
                    consider(beta_[j]);
                    if (eta > tol) {
                        for (int si : {-1, 1})
                            for (int sj : {-1, 1})
                                consider(-(s0 + eps * (si - sj)) / eta);
                    }
                    if (best_gain < -tol && std::abs(best_delta) > tol) {
                        beta_[i] += best_delta;
                        beta_[j] -= best_delta;
                        for (std::size_t k = 0; k < n; ++k)
                            g[k] += best_delta * (K[i * n + k] - K[j * n + k]);
                        improved -= best_gain;
                    }
                }
            }
            if (improved < 1e-6) break;
        }

        // Intercept from the free support vectors; bound-derived midpoint if
        // every beta sits on a box edge or at zero.
        double b_sum = 0.0;
        int b_count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = std::abs(beta_[i]);
            if (a > 1e-8 && a < C * (1.0 - 1e-8)) {
                b_sum += y[i] - g[i] - eps * (beta_[i] > 0 ? 1.0 : -1.0);
                ++b_count;
            }
        }
        if (b_count > 0) {
            intercept_ = b_sum / b_count;
        } else {
            double lo = -std::numeric_limits<double>::infinity();
            double hi = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) {
                const double r = y[i] - g[i];
                if (beta_[i] >= C * (1.0 - 1e-8)) {
                    hi = std::min(hi, r - eps);
                } else if (beta_[i] <= -C * (1.0 - 1e-8)) {
                    lo = std::max(lo, r + eps);
                } else {
                    lo = std::max(lo, r - eps);
                    hi = std::min(hi, r + eps);
                }
            }
            intercept_ = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi)
                         : std::isfinite(lo)                    ? lo
                         : std::isfinite(hi)                    ? hi
                                                                : 0.0;
        }
        fitted_ = true;
    }

    double predict(std::span<const double> row) const override {
        double acc = intercept_;
        for (std::size_t i = 0; i < x_.n; ++i)
            if (beta_[i] != 0.0) acc += beta_[i] * kernel(x_.row(i), row);
        return acc;
    }

private:
    static double feature_variance(const FeatureMatrix& x) {
        if (x.v.empty()) return 1.0;
        double mean = 0.0;
        for (double v : x.v) mean += v;
        mean /= static_cast<double>(x.v.size());
        double var = 0.0;
        for (double v : x.v) var += (v - mean) * (v - mean);
        return var / static_cast<double>(x.v.size());
    }

    double kernel(std::span<const double> a, std::span<const double> b) const {
        double d2 = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
        return std::exp(-gamma_ * d2);
    }

    RegressorParams params_;
    FeatureMatrix x_;
    std::vector<double> beta_;
    double gamma_ = 1.0;
    double intercept_ = 0.0;
};

// ---------------------------------------------------------------------------
// Random forest of CART regression trees: seeded bootstrap per tree, random
// feature subset per split, variance-reduction splits.
// ---------------------------------------------------------------------------

class ForestRegressor final : public Regressor {
public:
    explicit ForestRegressor(const RegressorParams& p) : params_(p) {}

    void fit(const FeatureMatrix& x, std::span<const double> y) override {
        if (x.n == 0 || x.n != y.size()) throw LengthMismatch("forest: bad training shape");
        trees_.clear();
        d_ = x.d;
        Rng rng(hash_combine(params_.seed, 0xf04e57ull));
        for (int t = 0; t < params_.forest_trees; ++t) {
            std::vector<std::size_t> sample(x.n);
            for (auto& i : sample) i = rng.uniform_index(x.n);
            trees_.emplace_back();
            build_node(trees_.back(), x, y, std::move(sample), rng);
        }
        fitted_ = true;
    }

    double predict(std::span<const double> row) const override {
        double acc = 0.0;
        for (const auto& tree : trees_) {
            std::size_t node = 0;
            while (tree[node].feature >= 0)
                node = row[static_cast<std::size_t>(tree[node].feature)] <= tree[node].threshold
                           ? tree[node].left
                           : tree[node].right;
            acc += tree[node].value;
        }
        return trees_.empty() ? 0.0 : acc / static_cast<double>(trees_.size());
    }

private:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        double value = 0.0;
        std::size_t left = 0, right = 0;
    };
    using Tree = std::vector<Node>;

    std::size_t build_node(Tree& tree, const FeatureMatrix& x, std::span<const double> y,
                           std::vector<std::size_t> idx, Rng& rng) {
        const std::size_t me = tree.size();
        tree.emplace_back();

        double sum = 0.0;
        for (std::size_t i : idx) sum += y[i];
        const double mean = sum / static_cast<double>(idx.size());
        tree[me].value = mean;

        if (idx.size() < 2 * static_cast<std::size_t>(params_.forest_min_leaf)) return me;
        double sse = 0.0;
        for (std::size_t i : idx) sse += (y[i] - mean) * (y[i] - mean);
        if (sse <= 1e-12) return me;

        // Random feature subset of size ceil(d/3), at least 1.
        std::vector<std::size_t> features(d_);
        std::iota(features.begin(), features.end(), 0);
        rng.shuffle(features);
        features.resize(std::max<std::size_t>(1, (d_ + 2) / 3));

        int best_feature = -1;
        double best_threshold = 0.0, best_score = sse;
        for (std::size_t f : features) {
            std::vector<std::size_t> order = idx;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (x.at(a, f) != x.at(b, f)) return x.at(a, f) < x.at(b, f);
                return a < b;
            });
            double left_sum = 0.0, left_sq = 0.0;
            double right_sum = 0.0, right_sq = 0.0;
            for (std::size_t i : order) {
                right_sum += y[i];
                right_sq += y[i] * y[i];
            }
            for (std::size_t k = 0; k + 1 < order.size(); ++k) {
                const double yk = y[order[k]];
                left_sum += yk;
                left_sq += yk * yk;
                right_sum -= yk;
                right_sq -= yk * yk;
                if (x.at(order[k], f) == x.at(order[k + 1], f)) continue;
                const std::size_t nl = k + 1, nr = order.size() - nl;
                if (nl < static_cast<std::size_t>(params_.forest_min_leaf) ||
                    nr < static_cast<std::size_t>(params_.forest_min_leaf))
                    continue;
                const double score = (left_sq - left_sum * left_sum / nl) +
                                     (right_sq - right_sum * right_sum / nr);
                if (score < best_score - 1e-12) {
                    best_score = score;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (x.at(order[k], f) + x.at(order[k + 1], f));
                }
            }
        }
        if (best_feature < 0) return me;

        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t i : idx)
            (x.at(i, static_cast<std::size_t>(best_feature)) <= best_threshold ? left_idx : right_idx)
                .push_back(i);
        if (left_idx.empty() || right_idx.empty()) return me;

        tree[me].feature = best_feature;
        tree[me].threshold = best_threshold;
        const std::size_t l = build_node(tree, x, y, std::move(left_idx), rng);
        const std::size_t r = build_node(tree, x, y, std::move(right_idx), rng);
        tree[me].left = l;
        tree[me].right = r;
        return me;
    }

    RegressorParams params_;
    std::vector<Tree> trees_;
    std::size_t d_ = 0;
};

inline std::unique_ptr<Regressor> make_regressor(RegressorKind kind, const RegressorParams& params) {
    switch (kind) {
        case RegressorKind::linear: return std::make_unique<LinearRegressor>();
        case RegressorKind::support_vector: return std::make_unique<SvrRegressor>(params);
        default: return std::make_unique<ForestRegressor>(params);
    }
}

}  // namespace gdsm
