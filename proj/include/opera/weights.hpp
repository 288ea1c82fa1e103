#pragma once

// Pair-coefficient schemes for the unified similarity objective. A scheme
// turns one anchor's similarity row into nonnegative coefficients: w_p for
// positive pairs, w_n for negative pairs. Softmax and InfoNCE use the
// exp-ratio forms; Constant is the fixed-weight case the theory module
// builds its closed-form checks on.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <vector>

#include "opera/errors.hpp"
#include "opera/labels.hpp"

namespace opera {

enum class WeightKind { Softmax, InfoNCE, Constant };

enum class Level { Self, Full };

struct WeightScheme {
    WeightKind kind = WeightKind::Constant;
    double tau = 1.0;  // InfoNCE temperature
    double w_p = 1.0;  // Constant positive coefficient
    double w_n = 1.0;  // Constant negative coefficient

    static WeightScheme softmax() { return {WeightKind::Softmax, 1.0, 1.0, 1.0}; }

    static WeightScheme infonce(double tau) {
        if (!(tau > 0.0)) throw DomainError("InfoNCE temperature must be positive");
        return {WeightKind::InfoNCE, tau, 1.0, 1.0};
    }

    static WeightScheme constant(double w_p, double w_n) {
        if (w_p < 0.0 || w_n < 0.0) throw DomainError("constant pair weights must be nonnegative");
        return {WeightKind::Constant, 1.0, w_p, w_n};
    }
};

// One anchor against a set of prototypes/keys: similarities plus the label
// relation for each pair. sims and relations stay index-aligned.
struct SimilarityRow {
    std::size_t anchor_index = 0;
    std::vector<double> sims;
    std::vector<PairRelation> relations;
};

inline bool is_positive(const PairRelation& r, Level level) {
    return level == Level::Self ? r.same_instance : r.same_class;
}

// Coefficients aligned with row.sims: w[j] is w_p where pair j is positive
// at the requested level and w_n where it is negative. All entries >= 0.
inline std::vector<double> pair_weights(const WeightScheme& scheme, const SimilarityRow& row,
                                        Level level) {
    const std::size_t n = row.sims.size();
    if (row.relations.size() != n) throw ShapeError("pair_weights: sims/relations length mismatch");

    std::vector<double> w(n, 0.0);
    if (scheme.kind == WeightKind::Constant) {
        for (std::size_t j = 0; j < n; ++j)
            w[j] = is_positive(row.relations[j], level) ? scheme.w_p : scheme.w_n;
        return w;
    }

    std::size_t positives = 0;
    for (const auto& r : row.relations) positives += is_positive(r, level) ? 1 : 0;
    if (positives == 0) {
        throw DegenerateError("pair_weights: row " + std::to_string(row.anchor_index) +
                              " has no positive pair at the requested level");
    }

    if (scheme.kind == WeightKind::Softmax) {
        // w_p = 1; w_n = exp(s) normalized over the negatives only.
        double max_neg = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (!is_positive(row.relations[j], level)) max_neg = std::max(max_neg, row.sims[j]);
        double denom = 0.0;
        if (std::isfinite(max_neg)) {
            for (std::size_t j = 0; j < n; ++j)
                if (!is_positive(row.relations[j], level)) denom += std::exp(row.sims[j] - max_neg);
        }
        for (std::size_t j = 0; j < n; ++j) {
            w[j] = is_positive(row.relations[j], level)
                       ? 1.0
                       : std::exp(row.sims[j] - max_neg) / denom;
        }
        return w;
    }

    // InfoNCE: a single positive against the row's negatives. The exp-ratio
    // form has no reading for multiple positives, so that case is rejected.
    if (positives != 1) {
        throw DegenerateError("pair_weights: InfoNCE needs exactly one positive per row, got " +
                              std::to_string(positives));
    }
    const double inv_tau = 1.0 / scheme.tau;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) max_logit = std::max(max_logit, row.sims[j] * inv_tau);
    double denom = 0.0;
    double neg_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(row.sims[j] * inv_tau - max_logit);
        denom += e;
        if (!is_positive(row.relations[j], level)) neg_sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(row.sims[j] * inv_tau - max_logit);
        w[j] = is_positive(row.relations[j], level) ? inv_tau * neg_sum / denom
                                                    : inv_tau * e / denom;
    }
    return w;
}

}  // namespace opera
