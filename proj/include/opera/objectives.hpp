#pragma once

// The unified pairwise objective and its combinations:
//   unified_loss         one supervision level, any weight scheme
//   naive_combined_loss  both levels summed on the same similarities
//   adaptive_weight      the modulation-factor form of the combined weight
//   opera_loss           hierarchical instantiation: InfoNCE on the
//                        instance embeddings + cross-entropy on the class
//                        logits, gradients to the online side only
//
// Weights are treated as constants when differentiating, so dJ/ds is -w_p
// on positive pairs and +w_n on negative pairs throughout.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "opera/errors.hpp"
#include "opera/labels.hpp"
#include "opera/matrix.hpp"
#include "opera/weights.hpp"

namespace opera {

struct LossReport {
    double value = 0.0;
    // dJ/ds per row, aligned with each row's sims.
    std::vector<std::vector<double>> grad_sims;
    // dJ/dy per anchor, filled only by the prototype-aware overload.
    std::optional<Matrix> grad_anchor;
    // per-level split, filled by naive_combined_loss (value = self + full).
    double self_value = 0.0;
    double full_value = 0.0;
};

inline LossReport unified_loss(const std::vector<SimilarityRow>& rows, const WeightScheme& scheme,
                               Level level) {
    LossReport report;
    report.grad_sims.reserve(rows.size());
    for (const auto& row : rows) {
        const std::vector<double> w = pair_weights(scheme, row, level);
        std::vector<double> grad(row.sims.size(), 0.0);
        for (std::size_t j = 0; j < row.sims.size(); ++j) {
            const double sign = is_positive(row.relations[j], level) ? -1.0 : 1.0;
            report.value += sign * w[j] * row.sims[j];
            grad[j] = sign * w[j];
        }
        report.grad_sims.push_back(std::move(grad));
    }
    if (!std::isfinite(report.value)) throw NumericError("unified_loss: non-finite value");
    return report;
}

// Builds similarity rows from anchor/prototype vectors (s = y^T p) and also
// reports dJ/dy per anchor, valid when the prototypes are held fixed.
inline LossReport unified_loss(const Matrix& anchors, const std::vector<LabelPair>& anchor_labels,
                               const Matrix& prototypes, const std::vector<LabelPair>& prototype_labels,
                               const WeightScheme& scheme, Level level) {
    if (anchors.rows() != anchor_labels.size()) throw ShapeError("unified_loss: anchor label count");
    if (prototypes.rows() != prototype_labels.size())
        throw ShapeError("unified_loss: prototype label count");
    if (anchors.cols() != prototypes.cols()) throw ShapeError("unified_loss: embedding widths differ");

    std::vector<SimilarityRow> rows;
    rows.reserve(anchors.rows());
    const Matrix sims = matmul_nt(anchors, prototypes);
    for (std::size_t i = 0; i < anchors.rows(); ++i) {
        SimilarityRow row;
        row.anchor_index = i;
        row.sims = sims.row(i);
        row.relations.reserve(prototypes.rows());
        for (std::size_t j = 0; j < prototypes.rows(); ++j)
            row.relations.push_back(relate(anchor_labels[i], prototype_labels[j]));
        rows.push_back(std::move(row));
    }

    LossReport report = unified_loss(rows, scheme, level);
    Matrix grad_anchor(anchors.rows(), anchors.cols());
    for (std::size_t i = 0; i < anchors.rows(); ++i) {
        double* gi = grad_anchor.row_ptr(i);
        for (std::size_t j = 0; j < prototypes.rows(); ++j) {
            const double g = report.grad_sims[i][j];
            const double* pj = prototypes.row_ptr(j);
            for (std::size_t d = 0; d < anchors.cols(); ++d) gi[d] += g * pj[d];
        }
    }
    report.grad_anchor = std::move(grad_anchor);
    return report;
}

// Both supervision levels imposed on the same similarities. On a pair that
// is same-class but different-instance the two signals collide and the
// effective dJ/ds is w_n_self - w_p_full.
inline LossReport naive_combined_loss(const std::vector<SimilarityRow>& rows,
                                      const WeightScheme& scheme_self,
                                      const WeightScheme& scheme_full) {
    LossReport self_part = unified_loss(rows, scheme_self, Level::Self);
    const LossReport full_part = unified_loss(rows, scheme_full, Level::Full);
    LossReport report;
    report.self_value = self_part.value;
    report.full_value = full_part.value;
    report.value = self_part.value + full_part.value;
    report.grad_sims = std::move(self_part.grad_sims);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < report.grad_sims[r].size(); ++j)
            report.grad_sims[r][j] += full_part.grad_sims[r][j];
    return report;
}

// Combined coefficient on a same-class, different-instance pair once the
// hierarchy's modulation factors are in play. Negative means the pair is
// attracted, positive repelled.
inline double adaptive_weight(double w_n_self, double alpha, double w_p_full, double beta) {
    if (!std::isfinite(w_n_self) || !std::isfinite(alpha) || !std::isfinite(w_p_full) ||
        !std::isfinite(beta)) {
        throw NumericError("adaptive_weight: non-finite input");
    }
    if (alpha < 0.0 || beta < 0.0)
        throw DomainError("adaptive_weight: modulation factors are squared norms, must be >= 0");
    return w_n_self * alpha - w_p_full * beta;
}

// ---------------------------------------------------------------------------
// Hierarchical objective on a batch
// ---------------------------------------------------------------------------

struct OperaBatch {
    Matrix online_self;    // N x d: online-side instance embeddings (queries)
    Matrix target_self;    // N x d: target-side instance embeddings (keys, fixed)
    Matrix class_logits;   // N x C: online-side class-head outputs
    std::vector<LabelPair> labels;
};

struct OperaLossOptions {
    double tau = 0.2;
    bool normalize = true;    // L2-normalize instance embeddings before dot products
    double self_coeff = 1.0;  // weight of the instance term (0.5 per direction when symmetrized)
    double full_coeff = 1.0;  // relative weight of the class term (ablation knob)
};

struct OperaLossReport {
    double value = 0.0;
    double self_value = 0.0;
    double full_value = 0.0;
    Matrix grad_online_self;   // dJ/d(online_self), zero flow to target_self
    Matrix grad_class_logits;  // dJ/d(class_logits)
};

namespace detail {

// q_hat = q / max(||q||, eps); returns the effective divisor used.
inline double safe_normalize(const double* q, double* q_hat, std::size_t d, double eps = 1e-12) {
    double n2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) n2 += q[k] * q[k];
    const double n = std::max(std::sqrt(n2), eps);
    for (std::size_t k = 0; k < d; ++k) q_hat[k] = q[k] / n;
    return n;
}

}  // namespace detail

// Per anchor i: -log exp(q_i.k_i/tau) / sum_j exp(q_i.k_j/tau) for the self
// term and standard softmax cross-entropy at the true class for the full
// term, both averaged over the batch. Keys are constants (stop-gradient).
inline OperaLossReport opera_loss(const OperaBatch& batch, const OperaLossOptions& opt = {}) {
    const std::size_t n = batch.online_self.rows();
    const std::size_t d = batch.online_self.cols();
    const std::size_t num_classes = batch.class_logits.cols();
    if (batch.target_self.rows() != n || batch.target_self.cols() != d)
        throw ShapeError("opera_loss: online/target embedding shapes differ");
    if (batch.class_logits.rows() != n) throw ShapeError("opera_loss: class logit row count");
    if (batch.labels.size() != n) throw ShapeError("opera_loss: label count");
    if (!(opt.tau > 0.0)) throw DomainError("opera_loss: tau must be positive");
    if (n < 2) throw DegenerateError("opera_loss: InfoNCE needs in-batch negatives, batch of " +
                                     std::to_string(n));
    for (const auto& l : batch.labels) {
        if (l.class_id >= num_classes)
            throw DomainError("opera_loss: class_id " + std::to_string(l.class_id) +
                              " out of range for " + std::to_string(num_classes) + " classes");
    }

    OperaLossReport report;
    report.grad_online_self = Matrix(n, d);
    report.grad_class_logits = Matrix(n, num_classes);
    const double inv_n = 1.0 / static_cast<double>(n);

    // Self term: queries against all keys in the batch, positive at j == i.
    Matrix q_hat = batch.online_self;
    Matrix k_hat = batch.target_self;
    std::vector<double> q_norm(n, 1.0);
    if (opt.normalize) {
        for (std::size_t i = 0; i < n; ++i) {
            q_norm[i] = detail::safe_normalize(batch.online_self.row_ptr(i), q_hat.row_ptr(i), d);
            detail::safe_normalize(batch.target_self.row_ptr(i), k_hat.row_ptr(i), d);
        }
    }
    const Matrix logits = scale(matmul_nt(q_hat, k_hat), 1.0 / opt.tau);
    std::vector<double> g_qhat(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* li = logits.row_ptr(i);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) max_logit = std::max(max_logit, li[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(li[j] - max_logit);
        report.self_value += -(li[i] - max_logit - std::log(denom)) * inv_n * opt.self_coeff;

        // d(-log softmax_i)/d q_hat = sum_j (p_j - [j==i]) k_hat_j / tau
        std::fill(g_qhat.begin(), g_qhat.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double p = std::exp(li[j] - max_logit) / denom;
            const double coeff = (p - (j == i ? 1.0 : 0.0)) / opt.tau * inv_n * opt.self_coeff;
            const double* kj = k_hat.row_ptr(j);
            for (std::size_t k = 0; k < d; ++k) g_qhat[k] += coeff * kj[k];
        }
        double* gi = report.grad_online_self.row_ptr(i);
        if (opt.normalize) {
            // through q_hat = q / max(||q||, eps): g_q = (g - (g.q_hat) q_hat) / norm
            const double* qh = q_hat.row_ptr(i);
            double proj = 0.0;
            for (std::size_t k = 0; k < d; ++k) proj += g_qhat[k] * qh[k];
            for (std::size_t k = 0; k < d; ++k) gi[k] = (g_qhat[k] - proj * qh[k]) / q_norm[i];
        } else {
            for (std::size_t k = 0; k < d; ++k) gi[k] = g_qhat[k];
        }
    }

    // Full term: softmax cross-entropy of each logit row at the true class.
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = batch.class_logits.row_ptr(i);
        const std::size_t true_class = static_cast<std::size_t>(batch.labels[i].class_id);
        double max_z = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < num_classes; ++c) max_z = std::max(max_z, zi[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < num_classes; ++c) denom += std::exp(zi[c] - max_z);
        report.full_value += -(zi[true_class] - max_z - std::log(denom)) * inv_n * opt.full_coeff;
        double* gz = report.grad_class_logits.row_ptr(i);
        for (std::size_t c = 0; c < num_classes; ++c) {
            const double p = std::exp(zi[c] - max_z) / denom;
            gz[c] = (p - (c == true_class ? 1.0 : 0.0)) * inv_n * opt.full_coeff;
        }
    }

    report.value = report.self_value + report.full_value;
    if (!std::isfinite(report.value)) throw NumericError("opera_loss: non-finite value");
    require_finite(report.grad_online_self, "opera_loss self gradient");
    require_finite(report.grad_class_logits, "opera_loss class gradient");
    return report;
}

// Batch-mean softmax cross-entropy at each row's true class. Shared by the
// full-supervision branch (second view), the fsl mode and the linear probe.
struct CrossEntropyReport {
    double value = 0.0;
    Matrix grad;  // d(value)/d logits
};

inline CrossEntropyReport softmax_ce_batch(const Matrix& logits,
                                           const std::vector<LabelPair>& labels,
                                           double coeff = 1.0) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n) throw ShapeError("softmax_ce_batch: label count");
    CrossEntropyReport report;
    report.grad = Matrix(n, c);
    if (n == 0) return report;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t true_class = static_cast<std::size_t>(labels[i].class_id);
        if (true_class >= c)
            throw DomainError("softmax_ce_batch: class_id " + std::to_string(true_class) +
                              " out of range for " + std::to_string(c) + " classes");
        const double* zi = logits.row_ptr(i);
        double max_z = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < c; ++k) max_z = std::max(max_z, zi[k]);
        double denom = 0.0;
        for (std::size_t k = 0; k < c; ++k) denom += std::exp(zi[k] - max_z);
        report.value += -(zi[true_class] - max_z - std::log(denom)) * inv_n * coeff;
        double* gi = report.grad.row_ptr(i);
        for (std::size_t k = 0; k < c; ++k) {
            const double p = std::exp(zi[k] - max_z) / denom;
            gi[k] = (p - (k == true_class ? 1.0 : 0.0)) * inv_n * coeff;
        }
    }
    if (!std::isfinite(report.value)) throw NumericError("softmax_ce_batch: non-finite value");
    return report;
}

// Row-wise q / max(||q||, eps) with the norms captured for the backward.
inline Matrix normalize_rows(const Matrix& m, std::vector<double>& norms) {
    Matrix out(m.rows(), m.cols());
    norms.assign(m.rows(), 1.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
        norms[i] = detail::safe_normalize(m.row_ptr(i), out.row_ptr(i), m.cols());
    return out;
}

// Pulls a gradient w.r.t. normalized rows back to the raw rows.
inline Matrix normalize_rows_backward(const Matrix& normalized, const Matrix& d_normalized,
                                      const std::vector<double>& norms) {
    if (!normalized.same_shape(d_normalized) || norms.size() != normalized.rows())
        throw ShapeError("normalize_rows_backward: shape mismatch");
    Matrix d_raw(normalized.rows(), normalized.cols());
    for (std::size_t i = 0; i < normalized.rows(); ++i) {
        const double* nh = normalized.row_ptr(i);
        const double* dh = d_normalized.row_ptr(i);
        double* dr = d_raw.row_ptr(i);
        double proj = 0.0;
        for (std::size_t k = 0; k < normalized.cols(); ++k) proj += dh[k] * nh[k];
        for (std::size_t k = 0; k < normalized.cols(); ++k)
            dr[k] = (dh[k] - proj * nh[k]) / norms[i];
    }
    return d_raw;
}

// ---------------------------------------------------------------------------
// Reference gradients (independent oracles for the weight-scheme identities)
// ---------------------------------------------------------------------------
//
// These differentiate the loss functions themselves, written via logsumexp,
// and never touch pair_weights. cmd_verify and the tests compare the two
// routes.

// d/ds of J_s = -s_pos + log sum_neg exp(s_neg): the softmax objective with
// the denominator over the negatives, as used in the unified-framework
// reduction. pos_index marks the single positive.
inline std::vector<double> softmax_ce_grad_reference(const std::vector<double>& sims,
                                                     std::size_t pos_index) {
    std::vector<double> grad(sims.size(), 0.0);
    double max_neg = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < sims.size(); ++j)
        if (j != pos_index) max_neg = std::max(max_neg, sims[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < sims.size(); ++j)
        if (j != pos_index) lse += std::exp(sims[j] - max_neg);
    for (std::size_t j = 0; j < sims.size(); ++j)
        grad[j] = (j == pos_index) ? -1.0 : std::exp(sims[j] - max_neg) / lse;
    return grad;
}

// d/ds of -log( exp(s_pos/tau) / sum_all exp(s_j/tau) ). The positive
// coordinate is accumulated as -sum of the negative probabilities:
// p_pos - 1 computes the same value but cancels badly when p_pos ~ 1.
inline std::vector<double> infonce_grad_reference(const std::vector<double>& sims,
                                                  std::size_t pos_index, double tau) {
    std::vector<double> grad(sims.size(), 0.0);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double s : sims) max_logit = std::max(max_logit, s / tau);
    double denom = 0.0;
    for (double s : sims) denom += std::exp(s / tau - max_logit);
    double pos_grad = 0.0;
    for (std::size_t j = 0; j < sims.size(); ++j) {
        if (j == pos_index) continue;
        const double p = std::exp(sims[j] / tau - max_logit) / denom;
        grad[j] = p / tau;
        pos_grad -= p / tau;
    }
    grad[pos_index] = pos_grad;
    return grad;
}

}  // namespace opera
