#pragma once

// SGD with momentum and weight decay, the cosine schedule, and the
// pretraining loop for the four objective modes:
//
//   fsl    cross-entropy on the arrangement's class output
//   ssl    InfoNCE between online predictor and target projector outputs
//   naive  both supervision levels summed on the same pairwise similarities
//   opera  InfoNCE on the instance embeddings + cross-entropy on the class
//          head, per the hierarchy wiring
//
// One Rng seeded from the config drives everything (init, shuffles,
// augmentations), so identical configs give identical runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "opera/config.hpp"
#include "opera/data.hpp"
#include "opera/errors.hpp"
#include "opera/matrix.hpp"
#include "opera/model.hpp"
#include "opera/objectives.hpp"
#include "opera/rng.hpp"
#include "opera/weights.hpp"

namespace opera {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<std::vector<double>> velocity;  // aligned with the parameter list
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v
inline void sgd_step(OptimizerState& state, const std::vector<TensorRef>& params,
                     const std::vector<std::vector<double>*>& grads) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient counts");
    if (state.velocity.empty()) {
        state.velocity.reserve(params.size());
        for (const auto& p : params) state.velocity.emplace_back(p.values->size(), 0.0);
    }
    if (state.velocity.size() != params.size()) throw StateError("sgd_step: velocity drift");
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = *params[t].values;
        const auto& g = *grads[t];
        auto& v = state.velocity[t];
        if (g.size() != p.size() || v.size() != p.size())
            throw ShapeError("sgd_step: tensor " + params[t].name + " shape mismatch");
        if (!all_finite(g)) throw NumericError("sgd_step: non-finite gradient for " + params[t].name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = state.momentum * v[i] + g[i] + state.weight_decay * p[i];
            p[i] -= state.lr * v[i];
        }
    }
}

inline double cosine_lr(double base_lr, std::size_t epoch, std::size_t total) {
    if (total < 1) throw DomainError("cosine_lr: total must be >= 1");
    if (epoch > total) throw DomainError("cosine_lr: epoch beyond total");
    return base_lr * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                           static_cast<double>(total)));
}

// ---------------------------------------------------------------------------
// Pretraining loop
// ---------------------------------------------------------------------------

struct MetricsRecord {
    std::size_t epoch = 0;
    double loss_total = 0.0;
    double loss_self = 0.0;
    double loss_full = 0.0;
    double lr = 0.0;
    std::uint64_t wall_ms = 0;
};

struct BatchObservation {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double loss = 0.0;
    // naive mode: dJ/ds for every (same-class, different-instance) pair
    std::vector<double> neutral_pair_grads;
    const OnlineTargetPair* pair = nullptr;
};

using BatchObserver = std::function<void(const BatchObservation&)>;

struct PretrainResult {
    OnlineTargetPair pair;
    std::vector<MetricsRecord> history;
};

namespace detail {

inline void accumulate(StackGrads& into, const StackGrads& from) {
    for (std::size_t l = 0; l < into.size(); ++l) {
        into[l].weight = add(into[l].weight, from[l].weight);
        for (std::size_t i = 0; i < into[l].bias.size(); ++i) into[l].bias[i] += from[l].bias[i];
        for (std::size_t i = 0; i < into[l].gamma.size(); ++i) into[l].gamma[i] += from[l].gamma[i];
        for (std::size_t i = 0; i < into[l].shift.size(); ++i) into[l].shift[i] += from[l].shift[i];
    }
}

inline void accumulate(ModelGrads& into, const ModelGrads& from) {
    accumulate(into.backbone, from.backbone);
    accumulate(into.projector, from.projector);
    accumulate(into.predictor, from.predictor);
    accumulate(into.class_head, from.class_head);
}

struct BatchLoss {
    double self_value = 0.0;
    double full_value = 0.0;
    ModelGrads grads;
    std::vector<double> neutral_pair_grads;
    double total() const { return self_value + full_value; }
};

inline BatchLoss fsl_batch(const RunConfig& cfg, OnlineTargetPair& pair, const Matrix& v1,
                           const Matrix& v2, const std::vector<LabelPair>& labels) {
    BatchLoss out;
    auto res1 = forward(pair.online, v1, ForwardMode::Train);
    const double c1 = cfg.full_both_views ? 0.5 : 1.0;
    const auto ce1 = softmax_ce_batch(res1.class_out, labels, c1 * cfg.full_coeff);
    out.full_value = ce1.value;
    const Matrix zero_self(res1.self_out.rows(), res1.self_out.cols());
    out.grads = backward(pair.online, res1, zero_self, ce1.grad);
    if (cfg.full_both_views) {
        auto res2 = forward(pair.online, v2, ForwardMode::Train);
        const auto ce2 = softmax_ce_batch(res2.class_out, labels, 0.5 * cfg.full_coeff);
        out.full_value += ce2.value;
        accumulate(out.grads, backward(pair.online, res2, zero_self, ce2.grad));
    }
    return out;
}

// ssl and opera share the InfoNCE machinery; ssl zeroes the class term.
inline BatchLoss contrastive_batch(const RunConfig& cfg, OnlineTargetPair& pair, const Matrix& v1,
                                   const Matrix& v2, const std::vector<LabelPair>& labels) {
    BatchLoss out;
    const double full_active = cfg.mode == Mode::Opera ? cfg.full_coeff : 0.0;
    const double self_each = cfg.symmetrize ? 0.5 : 1.0;
    const double full_each = cfg.full_both_views ? 0.5 : 1.0;

    auto res1 = forward(pair.online, v1, ForwardMode::Train);
    const Matrix k2 = target_forward(pair.target, v2);

    OperaLossOptions opt1;
    opt1.tau = cfg.tau;
    opt1.normalize = cfg.normalize_embeddings;
    opt1.self_coeff = self_each;
    opt1.full_coeff = full_active * full_each;
    const auto r1 = opera_loss({res1.self_out, k2, res1.class_out, labels}, opt1);
    out.self_value = r1.self_value;
    out.full_value = r1.full_value;
    out.grads = backward(pair.online, res1, r1.grad_online_self, r1.grad_class_logits);

    const bool need_second_view = cfg.symmetrize || (cfg.full_both_views && full_active > 0.0);
    if (need_second_view) {
        auto res2 = forward(pair.online, v2, ForwardMode::Train);
        if (cfg.symmetrize) {
            const Matrix k1 = target_forward(pair.target, v1);
            OperaLossOptions opt2 = opt1;
            opt2.full_coeff = cfg.full_both_views ? full_active * 0.5 : 0.0;
            const auto r2 = opera_loss({res2.self_out, k1, res2.class_out, labels}, opt2);
            out.self_value += r2.self_value;
            out.full_value += r2.full_value;
            accumulate(out.grads,
                       backward(pair.online, res2, r2.grad_online_self, r2.grad_class_logits));
        } else {
            const auto ce2 = softmax_ce_batch(res2.class_out, labels, full_active * 0.5);
            out.full_value += ce2.value;
            const Matrix zero_self(res2.self_out.rows(), res2.self_out.cols());
            accumulate(out.grads, backward(pair.online, res2, zero_self, ce2.grad));
        }
    }
    return out;
}

// Both supervision levels on the same cross-network similarities (per
// anchor: all keys in the batch). Values and gradients are per-anchor
// averages so the scale matches the other modes.
inline BatchLoss naive_batch(const RunConfig& cfg, OnlineTargetPair& pair, const Matrix& v1,
                             const Matrix& v2, const std::vector<LabelPair>& labels) {
    BatchLoss out;
    auto res1 = forward(pair.online, v1, ForwardMode::Train);
    const Matrix k2 = target_forward(pair.target, v2);

    Matrix q_hat = res1.self_out;
    Matrix k_hat = k2;
    std::vector<double> q_norms(q_hat.rows(), 1.0);
    if (cfg.normalize_embeddings) {
        q_hat = normalize_rows(res1.self_out, q_norms);
        std::vector<double> ignored;
        k_hat = normalize_rows(k2, ignored);
    }

    const std::size_t n = q_hat.rows();
    const Matrix sims = matmul_nt(q_hat, k_hat);
    std::vector<SimilarityRow> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        rows[i].anchor_index = i;
        rows[i].sims = sims.row(i);
        rows[i].relations.reserve(n);
        for (std::size_t j = 0; j < n; ++j) rows[i].relations.push_back(relate(labels[i], labels[j]));
    }
    const auto report = naive_combined_loss(rows, cfg.scheme_for(cfg.naive_self_scheme, Level::Self),
                                            cfg.scheme_for(cfg.naive_full_scheme, Level::Full));
    const double inv_n = 1.0 / static_cast<double>(n);
    out.self_value = report.self_value * inv_n;
    out.full_value = report.full_value * inv_n;

    Matrix d_qhat(n, q_hat.cols());
    for (std::size_t i = 0; i < n; ++i) {
        double* di = d_qhat.row_ptr(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double g = report.grad_sims[i][j] * inv_n;
            const double* kj = k_hat.row_ptr(j);
            for (std::size_t d = 0; d < q_hat.cols(); ++d) di[d] += g * kj[d];
            if (!rows[i].relations[j].same_instance && rows[i].relations[j].same_class)
                out.neutral_pair_grads.push_back(report.grad_sims[i][j] * inv_n);
        }
    }
    const Matrix d_q = cfg.normalize_embeddings
                           ? normalize_rows_backward(q_hat, d_qhat, q_norms)
                           : d_qhat;
    const Matrix zero_class(res1.class_out.rows(), res1.class_out.cols());
    out.grads = backward(pair.online, res1, d_q, zero_class);
    return out;
}

}  // namespace detail

inline PretrainResult pretrain(const RunConfig& cfg, const Dataset& data,
                               const BatchObserver& observer = {}) {
    cfg.check();
    validate(data);
    if (data.size() < 2) throw ConfigError("pretrain: dataset needs at least 2 samples");

    Rng rng(cfg.seed);
    PretrainResult result;
    result.pair = make_online_target_pair(cfg.model(data.dim(), data.num_classes), rng,
                                          cfg.ema_momentum);
    OnlineTargetPair& pair = result.pair;

    OptimizerState opt;
    opt.momentum = cfg.sgd_momentum;
    opt.weight_decay = cfg.weight_decay;

    const AugmentConfig aug = cfg.augment();
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        opt.lr = cfg.lr_schedule == "cosine" ? cosine_lr(cfg.lr, epoch, cfg.epochs) : cfg.lr;
        rng.shuffle(order);

        double sum_self = 0.0, sum_full = 0.0;
        std::size_t seen = 0, batch_index = 0;
        for (std::size_t start = 0; start < data.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t batch_n = std::min(cfg.batch_size, data.size() - start);
            if (batch_n < 2) break;  // trailing singleton cannot feed BN or InfoNCE

            Matrix v1(batch_n, data.dim()), v2(batch_n, data.dim());
            std::vector<LabelPair> labels(batch_n);
            for (std::size_t b = 0; b < batch_n; ++b) {
                const std::size_t idx = order[start + b];
                auto views = two_views(data.features.row(idx), aug, rng);
                v1.set_row(b, views.first);
                v2.set_row(b, views.second);
                labels[b] = data.labels[idx];
            }

            detail::BatchLoss batch;
            try {
                switch (cfg.mode) {
                    case Mode::Fsl: batch = detail::fsl_batch(cfg, pair, v1, v2, labels); break;
                    case Mode::Naive: batch = detail::naive_batch(cfg, pair, v1, v2, labels); break;
                    default: batch = detail::contrastive_batch(cfg, pair, v1, v2, labels);
                }
                if (!std::isfinite(batch.total()))
                    throw NumericError("batch loss is not finite");
                const auto params = model_params(pair.online);
                const auto grads = grad_tensors(pair.online, batch.grads);
                sgd_step(opt, params, grads);
            } catch (const NumericError& e) {
                throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                          ", batch " + std::to_string(batch_index) + ")",
                                      static_cast<int>(epoch) - 1);
            }
            momentum_update(pair);

            sum_self += batch.self_value * static_cast<double>(batch_n);
            sum_full += batch.full_value * static_cast<double>(batch_n);
            seen += batch_n;

            if (observer) {
                BatchObservation obs;
                obs.epoch = epoch;
                obs.batch = batch_index;
                obs.loss = batch.total();
                obs.neutral_pair_grads = std::move(batch.neutral_pair_grads);
                obs.pair = &pair;
                observer(obs);
            }
        }
        if (seen == 0) throw ConfigError("pretrain: no usable batch (batch_size vs dataset size)");

        MetricsRecord record;
        record.epoch = epoch;
        record.loss_self = sum_self / static_cast<double>(seen);
        record.loss_full = sum_full / static_cast<double>(seen);
        record.loss_total = record.loss_self + record.loss_full;
        record.lr = opt.lr;
        record.wall_ms = static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                  t0)
                .count());
        result.history.push_back(record);
    }
    return result;
}

}  // namespace opera
