#pragma once

// Evaluation of frozen representations: linear probe, cosine kNN, and the
// three-way similarity diagnostic (view pairs vs same-class pairs vs
// cross-class pairs).

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "opera/data.hpp"
#include "opera/errors.hpp"
#include "opera/matrix.hpp"
#include "opera/model.hpp"
#include "opera/objectives.hpp"
#include "opera/rng.hpp"

namespace opera {

using Encoder = std::function<Matrix(const Matrix&)>;

// Frozen backbone in eval mode (running batch-norm statistics).
inline Encoder backbone_encoder(const HierarchyModel& model) {
    auto backbone = std::make_shared<Stack>(model.backbone);
    return [backbone](const Matrix& x) {
        return stack_forward(*backbone, x, ForwardMode::Eval);
    };
}

inline Encoder identity_encoder() {
    return [](const Matrix& x) { return x; };
}

struct ProbeResult {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::size_t epochs_used = 0;
};

struct ProbeOptions {
    std::size_t epochs = 100;
    double lr = 0.1;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

// Single linear layer trained with softmax cross-entropy on the frozen
// features; plain SGD, no weight decay.
inline ProbeResult linear_probe(const Encoder& encoder, const Dataset& train, const Dataset& test,
                                const ProbeOptions& opt = {}) {
    if (train.num_classes != test.num_classes)
        throw ConfigError("linear_probe: train/test class counts differ");
    if (train.size() == 0 || test.size() == 0) throw ConfigError("linear_probe: empty dataset");
    validate(train);
    validate(test);

    const Matrix z_train = encoder(train.features);
    const Matrix z_test = encoder(test.features);
    const std::size_t feat = z_train.cols(), classes = train.num_classes;

    Matrix weight(classes, feat);  // zero init keeps the probe deterministic
    Vector bias(classes, 0.0);
    Rng rng(opt.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < train.size(); start += opt.batch_size) {
            const std::size_t n = std::min(opt.batch_size, train.size() - start);
            Matrix zb(n, feat);
            std::vector<LabelPair> labels(n);
            for (std::size_t b = 0; b < n; ++b) {
                zb.set_row(b, z_train.row(order[start + b]));
                labels[b] = train.labels[order[start + b]];
            }
            Matrix logits = matmul_nt(zb, weight);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < classes; ++c) logits(i, c) += bias[c];
            const auto ce = softmax_ce_batch(logits, labels);
            const Matrix d_weight = matmul_tn(ce.grad, zb);
            for (std::size_t i = 0; i < weight.size(); ++i)
                weight.data()[i] -= opt.lr * d_weight.data()[i];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < classes; ++c) bias[c] -= opt.lr * ce.grad(i, c);
        }
    }

    ProbeResult result;
    result.epochs_used = opt.epochs;
    std::vector<std::size_t> correct(classes, 0), count(classes, 0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t best = 0;
        double best_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes; ++c) {
            double logit = bias[c];
            const double* wc = weight.row_ptr(c);
            const double* zi = z_test.row_ptr(i);
            for (std::size_t f = 0; f < feat; ++f) logit += wc[f] * zi[f];
            if (logit > best_logit) {
                best_logit = logit;
                best = c;
            }
        }
        const std::size_t truth = static_cast<std::size_t>(test.labels[i].class_id);
        count[truth]++;
        if (best == truth) correct[truth]++;
    }
    std::size_t total_correct = 0, total = 0;
    result.per_class_accuracy.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        if (count[c] > 0)
            result.per_class_accuracy[c] =
                static_cast<double>(correct[c]) / static_cast<double>(count[c]);
        total_correct += correct[c];
        total += count[c];
    }
    result.accuracy = static_cast<double>(total_correct) / static_cast<double>(total);
    return result;
}

namespace detail {

inline double cosine(const Vector& a, const Vector& b) {
    if (a == b) return 1.0;
    const double na = norm2(a), nb = norm2(b);
    if (na < 1e-300 || nb < 1e-300) return 0.0;
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

}  // namespace detail

// Cosine k-nearest-neighbor vote on frozen features. Similarity ties break
// toward the lower training index, vote ties toward the smaller class id.
inline double knn_eval(const Encoder& encoder, const Dataset& train, const Dataset& test,
                       std::size_t k) {
    if (train.size() == 0 || test.size() == 0) throw ConfigError("knn_eval: empty dataset");
    if (k < 1 || k > train.size()) throw ConfigError("knn_eval: k must be in [1, train size]");
    const Matrix z_train = encoder(train.features);
    const Matrix z_test = encoder(test.features);

    std::size_t correct = 0;
    std::vector<std::pair<double, std::size_t>> scored(train.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Vector zi = z_test.row(i);
        for (std::size_t j = 0; j < train.size(); ++j)
            scored[j] = {detail::cosine(zi, z_train.row(j)), j};
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                          scored.end(), [](const auto& a, const auto& b) {
                              return a.first != b.first ? a.first > b.first : a.second < b.second;
                          });
        std::vector<std::size_t> votes(train.num_classes, 0);
        for (std::size_t t = 0; t < k; ++t) votes[train.labels[scored[t].second].class_id]++;
        std::size_t best = 0;
        for (std::size_t c = 1; c < votes.size(); ++c)
            if (votes[c] > votes[best]) best = c;
        if (best == test.labels[i].class_id) correct++;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct SimilarityDiagnostic {
    double mean_same_instance = 0.0;
    double mean_same_class = 0.0;
    double mean_cross_class = 0.0;
};

// Mean cosine similarity of encoded pairs: two views of one sample,
// same-class different-instance, and cross-class.
inline SimilarityDiagnostic similarity_ordering(const Encoder& encoder, const Dataset& data,
                                                const AugmentConfig& aug, Rng& rng,
                                                std::size_t samples) {
    validate(data);
    if (samples < 1) throw SamplingError("similarity_ordering: samples must be >= 1");
    if (data.num_classes < 2) throw SamplingError("similarity_ordering: needs at least 2 classes");

    std::vector<std::vector<std::size_t>> by_class(data.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i].class_id].push_back(i);
    for (std::size_t c = 0; c < data.num_classes; ++c)
        if (by_class[c].size() < 2)
            throw SamplingError("similarity_ordering: class " + std::to_string(c) +
                                " has fewer than 2 samples");

    // Gather all pair members, encode once, then score.
    Matrix gathered(6 * samples, data.dim());
    std::size_t row = 0;
    const auto push = [&](const Vector& v) { gathered.set_row(row++, v); };
    for (std::size_t t = 0; t < samples; ++t) {
        const std::size_t i = rng.below(data.size());
        auto views = two_views(data.features.row(i), aug, rng);
        push(views.first);
        push(views.second);

        const std::size_t c = rng.below(data.num_classes);
        const auto& members = by_class[c];
        const std::size_t a = rng.below(members.size());
        std::size_t b = rng.below(members.size() - 1);
        if (b >= a) ++b;
        push(data.features.row(members[a]));
        push(data.features.row(members[b]));

        const std::size_t c1 = rng.below(data.num_classes);
        std::size_t c2 = rng.below(data.num_classes - 1);
        if (c2 >= c1) ++c2;
        push(data.features.row(by_class[c1][rng.below(by_class[c1].size())]));
        push(data.features.row(by_class[c2][rng.below(by_class[c2].size())]));
    }

    const Matrix encoded = encoder(gathered);
    SimilarityDiagnostic diag;
    for (std::size_t t = 0; t < samples; ++t) {
        diag.mean_same_instance += detail::cosine(encoded.row(6 * t), encoded.row(6 * t + 1));
        diag.mean_same_class += detail::cosine(encoded.row(6 * t + 2), encoded.row(6 * t + 3));
        diag.mean_cross_class += detail::cosine(encoded.row(6 * t + 4), encoded.row(6 * t + 5));
    }
    diag.mean_same_instance /= static_cast<double>(samples);
    diag.mean_same_class /= static_cast<double>(samples);
    diag.mean_cross_class /= static_cast<double>(samples);
    return diag;
}

}  // namespace opera
