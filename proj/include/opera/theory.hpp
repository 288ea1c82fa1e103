#pragma once

// Executable verification of the equivalence between the hierarchical
// objective and its projected form on the base representation space, for
// linear transformations g(y) = W_g y and h(y) = W_h y.
//
// Two routes are compared per trial:
//   route A: numeric gradient of the hierarchical objective w.r.t. the
//            anchor, dotted with the prototype (finite differences; never
//            touches alpha/beta),
//   route B: the closed-form relation coefficient built from
//            alpha = ||W_g p||^2 and beta = ||W_h W_g p||^2.
// Constant weight schemes keep the coefficients closed-form; the softmax /
// InfoNCE schemes are covered by the gradient identities in objectives.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "opera/errors.hpp"
#include "opera/finite_diff.hpp"
#include "opera/labels.hpp"
#include "opera/matrix.hpp"
#include "opera/objectives.hpp"
#include "opera/rng.hpp"

namespace opera {

struct LinearHierarchy {
    Matrix w_g;  // instance-space map
    Matrix w_h;  // class-space map, composes after w_g

    LinearHierarchy(Matrix g, Matrix h) : w_g(std::move(g)), w_h(std::move(h)) {
        if (w_h.cols() != w_g.rows())
            throw ShapeError("LinearHierarchy: w_h cols must equal w_g rows");
    }
};

// Constant pair coefficients for the two supervision levels.
struct HierarchyWeights {
    double w_p_self = 1.0;
    double w_n_self = 1.0;
    double w_p_full = 1.0;
    double w_n_full = 1.0;
};

struct AlphaBeta {
    double alpha = 0.0;
    double beta = 0.0;
};

inline AlphaBeta alpha_beta(const LinearHierarchy& hier, const Vector& p) {
    const Vector p_self = matvec(hier.w_g, p);
    const Vector p_full = matvec(hier.w_h, p_self);
    return {norm2_squared(p_self), norm2_squared(p_full)};
}

// The projected objective's coefficient on s(y,p) for one label relation.
inline double relation_coefficient(const PairRelation& rel, const HierarchyWeights& w,
                                   double alpha, double beta) {
    if (rel.same_instance && rel.same_class) return -w.w_p_self * alpha - w.w_p_full * beta;
    if (!rel.same_instance && rel.same_class) return w.w_n_self * alpha - w.w_p_full * beta;
    if (!rel.same_instance && !rel.same_class) return w.w_n_self * alpha + w.w_n_full * beta;
    throw ConsistencyError("relation_coefficient: same instance but different class");
}

// Hierarchical objective on a single (y, p) pair with fixed constant
// weights: the self term acts on (W_g y, W_g p), the full term on
// (W_h W_g y, W_h W_g p), each signed by its level's relation.
inline double hierarchical_pair_objective(const LinearHierarchy& hier, const Vector& y,
                                          const Vector& p, const PairRelation& rel,
                                          const HierarchyWeights& w) {
    const Vector y_self = matvec(hier.w_g, y);
    const Vector p_self = matvec(hier.w_g, p);
    const Vector y_full = matvec(hier.w_h, y_self);
    const Vector p_full = matvec(hier.w_h, p_self);
    const double s_self = dot(y_self, p_self);
    const double s_full = dot(y_full, p_full);
    const double self_term = rel.same_instance ? -w.w_p_self * s_self : w.w_n_self * s_self;
    const double full_term = rel.same_class ? -w.w_p_full * s_full : w.w_n_full * s_full;
    return self_term + full_term;
}

struct EquivalenceReport {
    double max_rel_discrepancy = 0.0;
    std::size_t trials = 0;
    // projected-objective coefficients (both-same, conflict, both-different)
    // for the worst trial's weights and alpha/beta.
    std::array<double, 3> relation_coefficients{};
};

namespace detail {

inline PairRelation draw_relation(Rng& rng) {
    switch (rng.below(3)) {
        case 0: return {true, true};
        case 1: return {false, true};
        default: return {false, false};
    }
}

inline HierarchyWeights draw_weights(Rng& rng) {
    return {rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0),
            rng.uniform(0.0, 2.0)};
}

// Discrepancy floor of 1: trials where the coefficient cancels toward zero
// are judged absolutely instead of amplifying roundoff.
inline double discrepancy(double a, double b) { return rel_err(a, b, 1.0); }

}  // namespace detail

// Random (y, p, relation, constant weights) trials against a fixed
// hierarchy. Route A differentiates the hierarchical objective itself.
inline EquivalenceReport verify_proposition1(const LinearHierarchy& hier, Rng& rng,
                                             std::size_t trials) {
    if (trials < 1) throw DomainError("verify_proposition1: trials must be >= 1");
    const std::size_t dim = hier.w_g.cols();
    EquivalenceReport report;
    report.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
        const Vector y = rng.gauss_vector(dim, 0.0, 0.5);
        const Vector p = rng.gauss_vector(dim, 0.0, 0.5);
        const PairRelation rel = detail::draw_relation(rng);
        const HierarchyWeights w = detail::draw_weights(rng);

        const auto objective = [&](const Vector& point) {
            return hierarchical_pair_objective(hier, point, p, rel, w);
        };
        const Vector grad = finite_diff_grad(objective, y);
        const double route_a = dot(grad, p);

        const AlphaBeta ab = alpha_beta(hier, p);
        const double route_b = relation_coefficient(rel, w, ab.alpha, ab.beta);

        const double disc = detail::discrepancy(route_a, route_b);
        if (disc >= report.max_rel_discrepancy) {
            report.max_rel_discrepancy = disc;
            report.relation_coefficients = {
                relation_coefficient({true, true}, w, ab.alpha, ab.beta),
                relation_coefficient({false, true}, w, ab.alpha, ab.beta),
                relation_coefficient({false, false}, w, ab.alpha, ab.beta)};
        }
    }
    return report;
}

// Fresh random hierarchy per trial; dims drawn in [1, max_dim].
inline EquivalenceReport verify_proposition1_random(Rng& rng, std::size_t trials,
                                                    std::size_t max_dim = 8) {
    if (trials < 1) throw DomainError("verify_proposition1_random: trials must be >= 1");
    EquivalenceReport report;
    report.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
        Rng trial_rng(Rng::derive_seed(rng.seed(), t));
        const std::size_t d = 1 + trial_rng.below(max_dim);
        const std::size_t k = 1 + trial_rng.below(max_dim);
        const std::size_t m = 1 + trial_rng.below(max_dim);
        Matrix w_g(k, d, trial_rng.gauss_vector(k * d, 0.0, 0.5));
        Matrix w_h(m, k, trial_rng.gauss_vector(m * k, 0.0, 0.5));
        const LinearHierarchy hier(std::move(w_g), std::move(w_h));
        const EquivalenceReport sub = verify_proposition1(hier, trial_rng, 1);
        if (sub.max_rel_discrepancy >= report.max_rel_discrepancy) {
            report.max_rel_discrepancy = sub.max_rel_discrepancy;
            report.relation_coefficients = sub.relation_coefficients;
        }
    }
    return report;
}

struct OrderingCounterexample {
    std::size_t trial = 0;
    double alpha = 0.0;
    double beta = 0.0;
    HierarchyWeights weights;
    std::array<double, 3> coefficients{};
};

// Checks coefficient(both-same) <= coefficient(conflict) <= coefficient(both
// -different) for random prototypes against a fixed hierarchy and weights.
inline std::optional<OrderingCounterexample> verify_corollary1(const LinearHierarchy& hier,
                                                               const HierarchyWeights& w, Rng& rng,
                                                               std::size_t trials) {
    if (w.w_p_self < 0 || w.w_n_self < 0 || w.w_p_full < 0 || w.w_n_full < 0)
        throw DomainError("verify_corollary1: scheme weights must be nonnegative");
    const std::size_t dim = hier.w_g.cols();
    for (std::size_t t = 0; t < trials; ++t) {
        const Vector p = rng.gauss_vector(dim);
        const AlphaBeta ab = alpha_beta(hier, p);
        const double c1 = relation_coefficient({true, true}, w, ab.alpha, ab.beta);
        const double c2 = relation_coefficient({false, true}, w, ab.alpha, ab.beta);
        const double c3 = relation_coefficient({false, false}, w, ab.alpha, ab.beta);
        if (!(c1 <= c2 && c2 <= c3)) {
            return OrderingCounterexample{t, ab.alpha, ab.beta, w, {c1, c2, c3}};
        }
    }
    return std::nullopt;
}

// Fully randomized ordering search: hierarchy, prototype and weights all
// drawn fresh per trial.
inline std::optional<OrderingCounterexample> verify_corollary1_random(Rng& rng, std::size_t trials,
                                                                      std::size_t max_dim = 8) {
    for (std::size_t t = 0; t < trials; ++t) {
        Rng trial_rng(Rng::derive_seed(rng.seed(), t));
        const std::size_t d = 1 + trial_rng.below(max_dim);
        const std::size_t k = 1 + trial_rng.below(max_dim);
        const std::size_t m = 1 + trial_rng.below(max_dim);
        Matrix w_g(k, d, trial_rng.gauss_vector(k * d));
        Matrix w_h(m, k, trial_rng.gauss_vector(m * k));
        const LinearHierarchy hier(std::move(w_g), std::move(w_h));
        const HierarchyWeights w = detail::draw_weights(trial_rng);
        if (auto violation = verify_corollary1(hier, w, trial_rng, 1)) {
            violation->trial = t;
            return violation;
        }
    }
    return std::nullopt;
}

// Signed weight in the conflict case. Negative: the pair's similarity is
// increased during optimization; positive: decreased.
inline double verify_corollary2(const LinearHierarchy& hier, double w_n_self, double w_p_full,
                                const Vector& p) {
    const AlphaBeta ab = alpha_beta(hier, p);
    return adaptive_weight(w_n_self, ab.alpha, w_p_full, ab.beta);
}

}  // namespace opera
