#pragma once

#include <memory>
#include <span>
#include <vector>

#include "gdsm/errors.hpp"
#include "gdsm/regressors.hpp"
#include "gdsm/selection.hpp"

namespace gdsm {

enum class AggregationMode : int { average = 0, regression = 1 };

inline const char* aggregation_mode_name(AggregationMode m) {
    return m == AggregationMode::average ? "average" : "regression";
}

// Final age aggregation over the C2 selected columns. Average mode is
// stateless; regression mode stacks a regressor fitted strictly on training
// rows. Both refuse selections that were not fit on training rows.
class Aggregator {
public:
    Aggregator(AggregationMode mode, RegressorKind kind, const RegressorParams& params)
        : mode_(mode), kind_(kind), params_(params) {}

    explicit Aggregator(AggregationMode mode)
        : Aggregator(mode, RegressorKind::linear, RegressorParams{}) {}

    AggregationMode mode() const { return mode_; }
    bool fitted() const { return mode_ == AggregationMode::average || (regressor_ && regressor_->fitted()); }

    void fit(const PredictionMatrix& train, const SelectionResult& selection) {
        check_selection(train, selection);
        if (train.split != SplitTag::train)
            throw SelectionLeakage("aggregator must be fitted on the training matrix");
        if (mode_ == AggregationMode::average) return;
        regressor_ = make_regressor(kind_, params_);
        regressor_->fit(features(train, selection), train.targets);
    }

    std::vector<double> apply(const PredictionMatrix& m, const SelectionResult& selection) const {
        check_selection(m, selection);
        std::vector<double> out(m.rows());
        if (mode_ == AggregationMode::average) {
            for (std::size_t r = 0; r < m.rows(); ++r) {
                double acc = 0.0;
                for (std::size_t c : selection.indices) acc += m.at(r, c);
                out[r] = acc / static_cast<double>(selection.indices.size());
            }
            return out;
        }
        if (!regressor_ || !regressor_->fitted())
            throw UnfittedAggregator("regression aggregator applied before fit");
        const FeatureMatrix x = features(m, selection);
        for (std::size_t r = 0; r < m.rows(); ++r) out[r] = regressor_->predict(x.row(r));
        return out;
    }

private:
    static void check_selection(const PredictionMatrix& m, const SelectionResult& selection) {
        if (selection.fit_split != SplitTag::train)
            throw SelectionLeakage("aggregation requires a selection fit on training rows");
        if (selection.indices.empty()) throw NoDefinedColumns("empty selection");
        for (std::size_t c : selection.indices)
            if (c >= m.cols()) throw LengthMismatch("selection index outside matrix");
    }

    static FeatureMatrix features(const PredictionMatrix& m, const SelectionResult& selection) {
        FeatureMatrix x;
        x.n = m.rows();
        x.d = selection.indices.size();
        x.v.resize(x.n * x.d);
        for (std::size_t r = 0; r < x.n; ++r)
            for (std::size_t c = 0; c < x.d; ++c) x.v[r * x.d + c] = m.at(r, selection.indices[c]);
        return x;
    }

    AggregationMode mode_;
    RegressorKind kind_;
    RegressorParams params_;
    std::unique_ptr<Regressor> regressor_;
};

}  // namespace gdsm
