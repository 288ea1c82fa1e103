#pragma once

// The hierarchy network: an MLP backbone standing in for a full vision
// encoder, a projector and predictor for the instance branch, and a
// two-layer class head whose attachment point is the arrangement:
//
//   A: class head on the backbone output
//   B: class head on the projector output, parallel to the predictor
//   C: class head on the predictor output
//
// The self branch (backbone -> projector -> predictor) is identical across
// arrangements. Forward caches everything backward needs; backward is
// plain reverse accumulation. The target side is a backbone+projector copy
// that only ever changes through momentum_update.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "opera/errors.hpp"
#include "opera/matrix.hpp"
#include "opera/rng.hpp"

namespace opera {

enum class Activation { None, ReLU };
enum class Arrangement { A, B, C };

// Train updates batch-norm running statistics, TrainFrozenStats normalizes
// with batch statistics but leaves the running buffers alone (the target
// network runs in this mode), Eval normalizes with the running buffers.
enum class ForwardMode { Train, TrainFrozenStats, Eval };

inline char arrangement_tag(Arrangement a) {
    switch (a) {
        case Arrangement::A: return 'A';
        case Arrangement::B: return 'B';
        default: return 'C';
    }
}

inline Arrangement parse_arrangement(const std::string& s) {
    if (s == "A" || s == "a") return Arrangement::A;
    if (s == "B" || s == "b") return Arrangement::B;
    if (s == "C" || s == "c") return Arrangement::C;
    throw ConfigError("unknown arrangement '" + s + "' (expected A, B or C)");
}

struct BatchNorm {
    Vector gamma;
    Vector shift;
    Vector running_mean;
    Vector running_var;
    double eps = 1e-5;
    double stats_momentum = 0.1;

    explicit BatchNorm(std::size_t width)
        : gamma(width, 1.0), shift(width, 0.0), running_mean(width, 0.0), running_var(width, 1.0) {}
};

struct MlpLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    std::optional<BatchNorm> batch_norm;
    Activation activation = Activation::None;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
};

using Stack = std::vector<MlpLayer>;

// Glorot-uniform weights, zero biases; fully determined by the Rng state.
inline MlpLayer make_layer(std::size_t in, std::size_t out, bool with_bn, Activation act,
                           Rng& rng) {
    MlpLayer layer;
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Vector w(in * out);
    for (auto& x : w) x = rng.uniform(-bound, bound);
    layer.weight = Matrix(out, in, std::move(w));
    layer.bias = Vector(out, 0.0);
    if (with_bn) layer.batch_norm.emplace(out);
    layer.activation = act;
    return layer;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct LayerTrace {
    Matrix input;    // N x in
    Matrix linear;   // N x out, after W x + b
    Vector mean;     // batch statistics (train modes, BN layers)
    Vector var;      // biased batch variance
    Matrix x_hat;    // normalized activations
    Matrix pre_act;  // input to the activation
    Matrix output;   // layer output
};

struct StackTrace {
    std::vector<LayerTrace> layers;
    ForwardMode mode = ForwardMode::Train;
};

inline Matrix layer_forward(MlpLayer& layer, const Matrix& x, ForwardMode mode,
                            LayerTrace* trace) {
    if (x.cols() != layer.in_dim())
        throw ShapeError("layer forward: input width " + std::to_string(x.cols()) +
                         ", layer expects " + std::to_string(layer.in_dim()));
    const std::size_t n = x.rows(), out = layer.out_dim();

    Matrix z = matmul_nt(x, layer.weight);
    for (std::size_t i = 0; i < n; ++i) {
        double* zi = z.row_ptr(i);
        for (std::size_t f = 0; f < out; ++f) zi[f] += layer.bias[f];
    }
    if (trace) {
        trace->input = x;
        trace->linear = z;
    }

    Matrix pre = z;
    if (layer.batch_norm) {
        BatchNorm& bn = *layer.batch_norm;
        const bool use_batch_stats = mode != ForwardMode::Eval;
        if (use_batch_stats && n < 2)
            throw DegenerateError("batch-norm needs a batch of at least 2 in train mode");

        Vector mean(out, 0.0), var(out, 0.0);
        if (use_batch_stats) {
            for (std::size_t i = 0; i < n; ++i) {
                const double* zi = z.row_ptr(i);
                for (std::size_t f = 0; f < out; ++f) mean[f] += zi[f];
            }
            for (double& m : mean) m /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* zi = z.row_ptr(i);
                for (std::size_t f = 0; f < out; ++f) {
                    const double d = zi[f] - mean[f];
                    var[f] += d * d;
                }
            }
            for (double& v : var) v /= static_cast<double>(n);
            if (mode == ForwardMode::Train) {
                for (std::size_t f = 0; f < out; ++f) {
                    bn.running_mean[f] =
                        (1.0 - bn.stats_momentum) * bn.running_mean[f] + bn.stats_momentum * mean[f];
                    bn.running_var[f] =
                        (1.0 - bn.stats_momentum) * bn.running_var[f] + bn.stats_momentum * var[f];
                }
            }
        } else {
            mean = bn.running_mean;
            var = bn.running_var;
        }

        Matrix x_hat(n, out);
        for (std::size_t i = 0; i < n; ++i) {
            const double* zi = z.row_ptr(i);
            double* xi = x_hat.row_ptr(i);
            double* pi = pre.row_ptr(i);
            for (std::size_t f = 0; f < out; ++f) {
                xi[f] = (zi[f] - mean[f]) / std::sqrt(var[f] + bn.eps);
                pi[f] = bn.gamma[f] * xi[f] + bn.shift[f];
            }
        }
        if (trace) {
            trace->mean = std::move(mean);
            trace->var = std::move(var);
            trace->x_hat = std::move(x_hat);
        }
    }
    if (trace) trace->pre_act = pre;

    Matrix out_mat = std::move(pre);
    if (layer.activation == Activation::ReLU) {
        for (double& v : out_mat.data()) v = v > 0.0 ? v : 0.0;
    }
    require_finite(out_mat, "layer forward");
    if (trace) trace->output = out_mat;
    return out_mat;
}

inline Matrix stack_forward(Stack& stack, const Matrix& x, ForwardMode mode,
                            StackTrace* trace = nullptr) {
    Matrix cur = x;
    if (trace) {
        trace->layers.assign(stack.size(), {});
        trace->mode = mode;
    }
    for (std::size_t l = 0; l < stack.size(); ++l)
        cur = layer_forward(stack[l], cur, mode, trace ? &trace->layers[l] : nullptr);
    return cur;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

struct LayerGrads {
    Matrix weight;
    Vector bias;
    Vector gamma;  // empty when the layer has no batch norm
    Vector shift;
};

using StackGrads = std::vector<LayerGrads>;

inline StackGrads zero_grads(const Stack& stack) {
    StackGrads grads;
    grads.reserve(stack.size());
    for (const auto& layer : stack) {
        LayerGrads g;
        g.weight = Matrix(layer.weight.rows(), layer.weight.cols());
        g.bias = Vector(layer.bias.size(), 0.0);
        if (layer.batch_norm) {
            g.gamma = Vector(layer.batch_norm->gamma.size(), 0.0);
            g.shift = Vector(layer.batch_norm->shift.size(), 0.0);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

inline Matrix layer_backward(const MlpLayer& layer, const LayerTrace& trace, Matrix d_out,
                             LayerGrads& grads) {
    const std::size_t n = trace.input.rows(), out = layer.out_dim();
    if (trace.output.rows() != n) throw StateError("layer backward: missing forward cache");
    if (!d_out.same_shape(trace.output)) throw ShapeError("layer backward: upstream shape");

    if (layer.activation == Activation::ReLU) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* pi = trace.pre_act.row_ptr(i);
            double* di = d_out.row_ptr(i);
            for (std::size_t f = 0; f < out; ++f)
                if (pi[f] <= 0.0) di[f] = 0.0;
        }
    }

    Matrix d_linear = std::move(d_out);
    if (layer.batch_norm) {
        const BatchNorm& bn = *layer.batch_norm;
        const Matrix d_pre = d_linear;
        d_linear = Matrix(n, out);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t f = 0; f < out; ++f) {
            const double inv_std = 1.0 / std::sqrt(trace.var[f] + bn.eps);
            double d_gamma = 0.0, d_shift = 0.0, d_var = 0.0, d_mean_direct = 0.0,
                   sum_centered = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dp = d_pre(i, f);
                d_gamma += dp * trace.x_hat(i, f);
                d_shift += dp;
                const double d_xhat = dp * bn.gamma[f];
                const double centered = trace.linear(i, f) - trace.mean[f];
                d_var += d_xhat * centered;
                d_mean_direct += d_xhat;
                sum_centered += centered;
            }
            d_var *= -0.5 * inv_std * inv_std * inv_std;
            const double d_mean =
                -d_mean_direct * inv_std + d_var * (-2.0 * inv_n) * sum_centered;
            for (std::size_t i = 0; i < n; ++i) {
                const double d_xhat = d_pre(i, f) * bn.gamma[f];
                const double centered = trace.linear(i, f) - trace.mean[f];
                d_linear(i, f) =
                    d_xhat * inv_std + d_var * 2.0 * centered * inv_n + d_mean * inv_n;
            }
            grads.gamma[f] += d_gamma;
            grads.shift[f] += d_shift;
        }
    }

    grads.weight = add(grads.weight, matmul_tn(d_linear, trace.input));
    for (std::size_t i = 0; i < n; ++i) {
        const double* di = d_linear.row_ptr(i);
        for (std::size_t f = 0; f < out; ++f) grads.bias[f] += di[f];
    }
    return matmul(d_linear, layer.weight);  // d input
}

// Accumulates into grads; returns the gradient w.r.t. the stack input.
inline Matrix stack_backward(const Stack& stack, const StackTrace& trace, Matrix d_out,
                             StackGrads& grads) {
    if (trace.mode == ForwardMode::Eval)
        throw StateError("stack backward: forward pass was run in eval mode");
    if (trace.layers.size() != stack.size())
        throw StateError("stack backward: trace does not match the stack");
    for (std::size_t l = stack.size(); l-- > 0;)
        d_out = layer_backward(stack[l], trace.layers[l], std::move(d_out), grads[l]);
    return d_out;
}

// ---------------------------------------------------------------------------
// Hierarchy model
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::size_t input_dim = 32;
    std::size_t backbone_hidden = 64;
    std::size_t backbone_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;
    std::size_t num_classes = 8;
    Arrangement arrangement = Arrangement::C;

    std::size_t class_head_hidden() const { return std::max<std::size_t>(4 * num_classes, 32); }

    std::size_t attach_dim() const {
        return arrangement == Arrangement::A ? backbone_dim : embed_dim;
    }
};

struct HierarchyModel {
    Stack backbone;
    Stack projector;
    Stack predictor;   // online side only
    Stack class_head;  // output width == num_classes
    Arrangement arrangement = Arrangement::C;
    ModelConfig config;
};

inline HierarchyModel make_hierarchy_model(const ModelConfig& cfg, Rng& rng) {
    HierarchyModel m;
    m.arrangement = cfg.arrangement;
    m.config = cfg;
    m.backbone.push_back(make_layer(cfg.input_dim, cfg.backbone_hidden, true, Activation::ReLU, rng));
    m.backbone.push_back(make_layer(cfg.backbone_hidden, cfg.backbone_dim, true, Activation::ReLU, rng));
    m.projector.push_back(make_layer(cfg.backbone_dim, cfg.hidden_dim, true, Activation::ReLU, rng));
    m.projector.push_back(make_layer(cfg.hidden_dim, cfg.embed_dim, false, Activation::None, rng));
    m.predictor.push_back(make_layer(cfg.embed_dim, cfg.hidden_dim, true, Activation::ReLU, rng));
    m.predictor.push_back(make_layer(cfg.hidden_dim, cfg.embed_dim, false, Activation::None, rng));
    m.class_head.push_back(
        make_layer(cfg.attach_dim(), cfg.class_head_hidden(), true, Activation::ReLU, rng));
    m.class_head.push_back(
        make_layer(cfg.class_head_hidden(), cfg.num_classes, false, Activation::None, rng));
    return m;
}

struct ForwardResult {
    Matrix backbone_out;   // y
    Matrix projector_out;  // g input to predictor
    Matrix self_out;       // y_self: predictor output
    Matrix class_out;      // y_full: class-head output
    StackTrace backbone_trace, projector_trace, predictor_trace, class_trace;
    ForwardMode mode = ForwardMode::Train;
};

inline ForwardResult forward(HierarchyModel& model, const Matrix& x, ForwardMode mode) {
    if (x.cols() != model.config.input_dim)
        throw ShapeError("forward: input width " + std::to_string(x.cols()) + ", model expects " +
                         std::to_string(model.config.input_dim));
    ForwardResult r;
    r.mode = mode;
    r.backbone_out = stack_forward(model.backbone, x, mode, &r.backbone_trace);
    r.projector_out = stack_forward(model.projector, r.backbone_out, mode, &r.projector_trace);
    r.self_out = stack_forward(model.predictor, r.projector_out, mode, &r.predictor_trace);
    const Matrix& attach = model.arrangement == Arrangement::A   ? r.backbone_out
                           : model.arrangement == Arrangement::B ? r.projector_out
                                                                 : r.self_out;
    r.class_out = stack_forward(model.class_head, attach, mode, &r.class_trace);
    return r;
}

struct ModelGrads {
    StackGrads backbone, projector, predictor, class_head;
};

inline ModelGrads zero_model_grads(const HierarchyModel& model) {
    return {zero_grads(model.backbone), zero_grads(model.projector), zero_grads(model.predictor),
            zero_grads(model.class_head)};
}

// Reverse accumulation through the arrangement wiring. d_self_out /
// d_class_out are the loss gradients w.r.t. the predictor and class-head
// outputs; pass a zero matrix for a branch the loss does not touch.
inline ModelGrads backward(const HierarchyModel& model, const ForwardResult& cache,
                           const Matrix& d_self_out, const Matrix& d_class_out) {
    if (!d_self_out.same_shape(cache.self_out)) throw ShapeError("backward: d_self_out shape");
    if (!d_class_out.same_shape(cache.class_out)) throw ShapeError("backward: d_class_out shape");

    ModelGrads grads = zero_model_grads(model);
    const Matrix d_attach =
        stack_backward(model.class_head, cache.class_trace, d_class_out, grads.class_head);

    Matrix d_predictor_out = d_self_out;
    if (model.arrangement == Arrangement::C) d_predictor_out = add(d_predictor_out, d_attach);
    Matrix d_projector_out =
        stack_backward(model.predictor, cache.predictor_trace, d_predictor_out, grads.predictor);
    if (model.arrangement == Arrangement::B) d_projector_out = add(d_projector_out, d_attach);
    Matrix d_backbone_out =
        stack_backward(model.projector, cache.projector_trace, d_projector_out, grads.projector);
    if (model.arrangement == Arrangement::A) d_backbone_out = add(d_backbone_out, d_attach);
    stack_backward(model.backbone, cache.backbone_trace, d_backbone_out, grads.backbone);
    return grads;
}

// ---------------------------------------------------------------------------
// Tensor enumeration (optimizer, momentum update, checkpoints)
// ---------------------------------------------------------------------------

struct TensorRef {
    std::string name;
    std::vector<double>* values;
    std::vector<std::size_t> shape;
};

inline void append_stack_tensors(Stack& stack, const std::string& prefix, bool include_buffers,
                                 std::vector<TensorRef>& out) {
    for (std::size_t l = 0; l < stack.size(); ++l) {
        const std::string base = prefix + "." + std::to_string(l) + ".";
        MlpLayer& layer = stack[l];
        out.push_back({base + "weight", &layer.weight.data(),
                       {layer.weight.rows(), layer.weight.cols()}});
        out.push_back({base + "bias", &layer.bias, {layer.bias.size()}});
        if (layer.batch_norm) {
            BatchNorm& bn = *layer.batch_norm;
            out.push_back({base + "bn_gamma", &bn.gamma, {bn.gamma.size()}});
            out.push_back({base + "bn_shift", &bn.shift, {bn.shift.size()}});
            if (include_buffers) {
                out.push_back({base + "bn_running_mean", &bn.running_mean, {bn.running_mean.size()}});
                out.push_back({base + "bn_running_var", &bn.running_var, {bn.running_var.size()}});
            }
        }
    }
}

// Learnable parameters of the online model, in a fixed traversal order.
inline std::vector<TensorRef> model_params(HierarchyModel& model) {
    std::vector<TensorRef> refs;
    append_stack_tensors(model.backbone, "backbone", false, refs);
    append_stack_tensors(model.projector, "projector", false, refs);
    append_stack_tensors(model.predictor, "predictor", false, refs);
    append_stack_tensors(model.class_head, "class_head", false, refs);
    return refs;
}

// Gradient tensors in the order matching model_params.
inline void append_stack_grads(const Stack& stack, StackGrads& grads,
                               std::vector<std::vector<double>*>& out) {
    for (std::size_t l = 0; l < stack.size(); ++l) {
        out.push_back(&grads[l].weight.data());
        out.push_back(&grads[l].bias);
        if (stack[l].batch_norm) {
            out.push_back(&grads[l].gamma);
            out.push_back(&grads[l].shift);
        }
    }
}

inline std::vector<std::vector<double>*> grad_tensors(const HierarchyModel& model,
                                                      ModelGrads& grads) {
    std::vector<std::vector<double>*> refs;
    append_stack_grads(model.backbone, grads.backbone, refs);
    append_stack_grads(model.projector, grads.projector, refs);
    append_stack_grads(model.predictor, grads.predictor, refs);
    append_stack_grads(model.class_head, grads.class_head, refs);
    return refs;
}

// ---------------------------------------------------------------------------
// Online/target pair
// ---------------------------------------------------------------------------

struct TargetNetwork {
    Stack backbone;
    Stack projector;
};

struct OnlineTargetPair {
    HierarchyModel online;
    TargetNetwork target;  // no predictor, no class head, never optimized
    double momentum = 0.99;
};

inline OnlineTargetPair make_online_target_pair(const ModelConfig& cfg, Rng& rng,
                                                double momentum = 0.99) {
    OnlineTargetPair pair;
    pair.online = make_hierarchy_model(cfg, rng);
    pair.target.backbone = pair.online.backbone;
    pair.target.projector = pair.online.projector;
    pair.momentum = momentum;
    return pair;
}

// Key embeddings; batch statistics are used but running buffers stay put,
// so the target only ever changes through momentum_update.
inline Matrix target_forward(TargetNetwork& target, const Matrix& x) {
    const Matrix y = stack_forward(target.backbone, x, ForwardMode::TrainFrozenStats);
    return stack_forward(target.projector, y, ForwardMode::TrainFrozenStats);
}

inline std::vector<TensorRef> target_tensors(TargetNetwork& target) {
    std::vector<TensorRef> refs;
    append_stack_tensors(target.backbone, "backbone", true, refs);
    append_stack_tensors(target.projector, "projector", true, refs);
    return refs;
}

inline std::vector<TensorRef> online_shadow_tensors(HierarchyModel& online) {
    std::vector<TensorRef> refs;
    append_stack_tensors(online.backbone, "backbone", true, refs);
    append_stack_tensors(online.projector, "projector", true, refs);
    return refs;
}

// theta_target <- m * theta_target + (1 - m) * theta_online for every
// tensor of the shared trunk, batch-norm buffers included.
inline void momentum_update(OnlineTargetPair& pair) {
    const double m = pair.momentum;
    const auto online = online_shadow_tensors(pair.online);
    const auto target = target_tensors(pair.target);
    if (online.size() != target.size()) throw StateError("momentum_update: tensor lists diverged");
    for (std::size_t t = 0; t < online.size(); ++t) {
        if (online[t].values->size() != target[t].values->size())
            throw StateError("momentum_update: shape drift on " + online[t].name);
        auto& dst = *target[t].values;
        const auto& src = *online[t].values;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = m * dst[i] + (1.0 - m) * src[i];
    }
}

}  // namespace opera
