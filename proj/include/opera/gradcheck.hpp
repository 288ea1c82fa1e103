#pragma once

// End-to-end gradient verification: the hierarchical loss through the full
// model (arrangement C, batch norm, ReLU, target keys, normalization)
// against central finite differences over every online parameter.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "opera/matrix.hpp"
#include "opera/model.hpp"
#include "opera/objectives.hpp"
#include "opera/rng.hpp"

namespace opera {

struct GradCheckResult {
    double max_rel_err = 0.0;
    bool kink_clear = true;  // all ReLU pre-activations at least margin away from 0
    std::size_t params_checked = 0;
};

namespace detail {

inline double stack_min_kink_margin(const Stack& stack, const StackTrace& trace) {
    double margin = 1e300;
    for (std::size_t l = 0; l < stack.size(); ++l)
        if (stack[l].activation == Activation::ReLU)
            for (double v : trace.layers[l].pre_act.data())
                margin = std::min(margin, std::abs(v));
    return margin;
}

inline double model_min_kink_margin(const HierarchyModel& model, const ForwardResult& res) {
    double margin = stack_min_kink_margin(model.backbone, res.backbone_trace);
    margin = std::min(margin, stack_min_kink_margin(model.projector, res.projector_trace));
    margin = std::min(margin, stack_min_kink_margin(model.predictor, res.predictor_trace));
    return std::min(margin, stack_min_kink_margin(model.class_head, res.class_trace));
}

}  // namespace detail

// One seeded trial at desk dimensions. Batch statistics are used without
// updating the running buffers so repeated forwards are side-effect free.
//
// Per-entry error is |analytic - fd| / max(|analytic|, |fd|, 1e-4): a bias
// feeding a batch-norm layer is structurally gradient-free (the mean
// subtraction cancels any constant shift), so both sides of the comparison
// are numerical zeros there and only an absolute floor reads them fairly.
// Gradient magnitudes elsewhere are O(0.01..1), so the floor hides nothing.
inline GradCheckResult opera_end_to_end_gradcheck(std::uint64_t seed, double kink_margin = 1e-3,
                                                  double fd_step = 1e-5) {
    Rng rng(seed);
    ModelConfig cfg;
    cfg.input_dim = 6;
    cfg.backbone_hidden = 8;
    cfg.backbone_dim = 8;
    cfg.hidden_dim = 8;
    cfg.embed_dim = 6;
    cfg.num_classes = 3;
    cfg.arrangement = Arrangement::C;

    OnlineTargetPair pair = make_online_target_pair(cfg, rng);
    // decorrelate the two networks so the keys are not trivial copies
    Rng target_rng(Rng::derive_seed(seed, 1));
    for (auto& ref : target_tensors(pair.target))
        for (double& v : *ref.values) v += 0.05 * target_rng.gauss();

    const std::size_t batch = 4;
    const Matrix v1(batch, cfg.input_dim, rng.gauss_vector(batch * cfg.input_dim));
    const Matrix v2(batch, cfg.input_dim, rng.gauss_vector(batch * cfg.input_dim));
    std::vector<LabelPair> labels;
    for (std::size_t i = 0; i < batch; ++i) labels.push_back({i, i % cfg.num_classes});

    const Matrix keys = target_forward(pair.target, v2);
    OperaLossOptions opt;
    opt.tau = 0.2;
    opt.normalize = true;

    const auto loss_value = [&]() {
        const auto res = forward(pair.online, v1, ForwardMode::TrainFrozenStats);
        return opera_loss({res.self_out, keys, res.class_out, labels}, opt).value;
    };

    GradCheckResult result;
    const auto res = forward(pair.online, v1, ForwardMode::TrainFrozenStats);
    if (detail::model_min_kink_margin(pair.online, res) < kink_margin) {
        result.kink_clear = false;
        return result;
    }

    const auto report = opera_loss({res.self_out, keys, res.class_out, labels}, opt);
    ModelGrads grads = backward(pair.online, res, report.grad_online_self, report.grad_class_logits);

    const auto params = model_params(pair.online);
    const auto analytic = grad_tensors(pair.online, grads);
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& values = *params[t].values;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            const double h = fd_step * (1.0 + std::abs(orig));
            values[i] = orig + h;
            const double f_plus = loss_value();
            values[i] = orig - h;
            const double f_minus = loss_value();
            values[i] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            result.max_rel_err =
                std::max(result.max_rel_err, rel_err((*analytic[t])[i], fd, 1e-4));
            ++result.params_checked;
        }
    }
    return result;
}

}  // namespace opera
