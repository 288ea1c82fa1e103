#pragma once

// Run configuration and its line-based `key = value` file format. Unknown
// keys are rejected rather than ignored: a silently dropped typo corrupts
// an ablation.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "opera/data.hpp"
#include "opera/errors.hpp"
#include "opera/model.hpp"
#include "opera/weights.hpp"

namespace opera {

enum class Mode { Fsl, Ssl, Naive, Opera };

inline std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Fsl: return "fsl";
        case Mode::Ssl: return "ssl";
        case Mode::Naive: return "naive";
        default: return "opera";
    }
}

inline Mode parse_mode(const std::string& s) {
    if (s == "fsl") return Mode::Fsl;
    if (s == "ssl") return Mode::Ssl;
    if (s == "naive") return Mode::Naive;
    if (s == "opera") return Mode::Opera;
    throw ConfigError("unknown mode '" + s + "' (expected fsl, ssl, naive or opera)");
}

struct RunConfig {
    Mode mode = Mode::Opera;
    Arrangement arrangement = Arrangement::C;
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double tau = 0.2;
    double ema_momentum = 0.99;
    double lr = 0.05;
    std::string lr_schedule = "cosine";  // cosine | constant
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    bool normalize_embeddings = true;
    bool symmetrize = false;
    bool full_both_views = true;
    double full_coeff = 1.0;

    // dataset: synthetic blobs by default, CSV when data_csv is set
    std::size_t blob_classes = 8;
    std::size_t blob_per_class = 100;
    std::size_t blob_dim = 32;
    double blob_spread = 0.1;
    std::string data_csv;

    // augmentation
    double noise_sigma = 0.1;
    double scale_lo = 0.9;
    double scale_hi = 1.1;
    double mask_prob = 0.0;

    // model widths
    std::size_t backbone_hidden = 64;
    std::size_t backbone_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;

    // naive-mode schemes: infonce | softmax | constant per level
    std::string naive_self_scheme = "infonce";
    std::string naive_full_scheme = "softmax";
    double naive_w_p_self = 1.0;
    double naive_w_n_self = 1.0;
    double naive_w_p_full = 1.0;
    double naive_w_n_full = 1.0;

    std::string out_dir = "out";

    AugmentConfig augment() const { return {noise_sigma, scale_lo, scale_hi, mask_prob}; }

    ModelConfig model(std::size_t input_dim, std::size_t num_classes) const {
        ModelConfig m;
        m.input_dim = input_dim;
        m.backbone_hidden = backbone_hidden;
        m.backbone_dim = backbone_dim;
        m.hidden_dim = hidden_dim;
        m.embed_dim = embed_dim;
        m.num_classes = num_classes;
        m.arrangement = arrangement;
        return m;
    }

    WeightScheme scheme_for(const std::string& name, Level level) const {
        if (name == "infonce") return WeightScheme::infonce(tau);
        if (name == "softmax") return WeightScheme::softmax();
        if (name == "constant") {
            return level == Level::Self ? WeightScheme::constant(naive_w_p_self, naive_w_n_self)
                                        : WeightScheme::constant(naive_w_p_full, naive_w_n_full);
        }
        throw ConfigError("unknown scheme '" + name + "' (expected infonce, softmax or constant)");
    }

    void check() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
        if (!(tau > 0.0)) throw ConfigError("tau must be positive");
        if (ema_momentum < 0.0 || ema_momentum > 1.0)
            throw ConfigError("ema_momentum must be in [0, 1]");
        if (lr < 0.0) throw ConfigError("lr must be >= 0");
        if (lr_schedule != "cosine" && lr_schedule != "constant")
            throw ConfigError("lr_schedule must be cosine or constant");
        if (sgd_momentum < 0.0 || sgd_momentum >= 1.0)
            throw ConfigError("sgd_momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (full_coeff < 0.0) throw ConfigError("full_coeff must be >= 0");
        if (blob_classes < 1 || blob_per_class < 1 || blob_dim < 1)
            throw ConfigError("blob counts must be >= 1");
        if (blob_spread < 0.0) throw ConfigError("blob_spread must be >= 0");
        augment().check();
        scheme_for(naive_self_scheme, Level::Self);
        scheme_for(naive_full_scheme, Level::Full);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

inline double parse_real(const std::string& v, const std::string& key) {
    std::size_t consumed = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &consumed);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
    if (consumed != v.size()) throw ConfigError("key '" + key + "': trailing characters in '" + v + "'");
    return out;
}

inline std::uint64_t parse_count(const std::string& v, const std::string& key) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    return std::stoull(v);
}

inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_count;
    using detail::parse_real;
    if (key == "mode") cfg.mode = parse_mode(value);
    else if (key == "arrangement") cfg.arrangement = parse_arrangement(value);
    else if (key == "epochs") cfg.epochs = parse_count(value, key);
    else if (key == "batch_size") cfg.batch_size = parse_count(value, key);
    else if (key == "tau") cfg.tau = parse_real(value, key);
    else if (key == "ema_momentum") cfg.ema_momentum = parse_real(value, key);
    else if (key == "lr") cfg.lr = parse_real(value, key);
    else if (key == "lr_schedule") cfg.lr_schedule = value;
    else if (key == "sgd_momentum") cfg.sgd_momentum = parse_real(value, key);
    else if (key == "weight_decay") cfg.weight_decay = parse_real(value, key);
    else if (key == "seed") cfg.seed = parse_count(value, key);
    else if (key == "normalize_embeddings") cfg.normalize_embeddings = parse_bool(value, key);
    else if (key == "symmetrize") cfg.symmetrize = parse_bool(value, key);
    else if (key == "full_both_views") cfg.full_both_views = parse_bool(value, key);
    else if (key == "full_coeff") cfg.full_coeff = parse_real(value, key);
    else if (key == "blob_classes") cfg.blob_classes = parse_count(value, key);
    else if (key == "blob_per_class") cfg.blob_per_class = parse_count(value, key);
    else if (key == "blob_dim") cfg.blob_dim = parse_count(value, key);
    else if (key == "blob_spread") cfg.blob_spread = parse_real(value, key);
    else if (key == "data_csv") cfg.data_csv = value;
    else if (key == "noise_sigma") cfg.noise_sigma = parse_real(value, key);
    else if (key == "scale_lo") cfg.scale_lo = parse_real(value, key);
    else if (key == "scale_hi") cfg.scale_hi = parse_real(value, key);
    else if (key == "mask_prob") cfg.mask_prob = parse_real(value, key);
    else if (key == "backbone_hidden") cfg.backbone_hidden = parse_count(value, key);
    else if (key == "backbone_dim") cfg.backbone_dim = parse_count(value, key);
    else if (key == "hidden_dim") cfg.hidden_dim = parse_count(value, key);
    else if (key == "embed_dim") cfg.embed_dim = parse_count(value, key);
    else if (key == "naive_self_scheme") cfg.naive_self_scheme = value;
    else if (key == "naive_full_scheme") cfg.naive_full_scheme = value;
    else if (key == "naive_w_p_self") cfg.naive_w_p_self = parse_real(value, key);
    else if (key == "naive_w_n_self") cfg.naive_w_n_self = parse_real(value, key);
    else if (key == "naive_w_p_full") cfg.naive_w_p_full = parse_real(value, key);
    else if (key == "naive_w_n_full") cfg.naive_w_n_full = parse_real(value, key);
    else if (key == "out_dir") cfg.out_dir = value;
    else throw ConfigError("unknown key '" + key + "'");
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        apply_config_entry(cfg, key, value);
    }
    cfg.check();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

// Canonical `key = value` dump; reproducible byte-for-byte from the config.
inline std::string resolved_config_text(const RunConfig& cfg) {
    using detail::format_real;
    std::ostringstream out;
    out << "mode = " << mode_name(cfg.mode) << "\n";
    out << "arrangement = " << arrangement_tag(cfg.arrangement) << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "tau = " << format_real(cfg.tau) << "\n";
    out << "ema_momentum = " << format_real(cfg.ema_momentum) << "\n";
    out << "lr = " << format_real(cfg.lr) << "\n";
    out << "lr_schedule = " << cfg.lr_schedule << "\n";
    out << "sgd_momentum = " << format_real(cfg.sgd_momentum) << "\n";
    out << "weight_decay = " << format_real(cfg.weight_decay) << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "normalize_embeddings = " << (cfg.normalize_embeddings ? "true" : "false") << "\n";
    out << "symmetrize = " << (cfg.symmetrize ? "true" : "false") << "\n";
    out << "full_both_views = " << (cfg.full_both_views ? "true" : "false") << "\n";
    out << "full_coeff = " << format_real(cfg.full_coeff) << "\n";
    out << "blob_classes = " << cfg.blob_classes << "\n";
    out << "blob_per_class = " << cfg.blob_per_class << "\n";
    out << "blob_dim = " << cfg.blob_dim << "\n";
    out << "blob_spread = " << format_real(cfg.blob_spread) << "\n";
    out << "data_csv = " << cfg.data_csv << "\n";
    out << "noise_sigma = " << format_real(cfg.noise_sigma) << "\n";
    out << "scale_lo = " << format_real(cfg.scale_lo) << "\n";
    out << "scale_hi = " << format_real(cfg.scale_hi) << "\n";
    out << "mask_prob = " << format_real(cfg.mask_prob) << "\n";
    out << "backbone_hidden = " << cfg.backbone_hidden << "\n";
    out << "backbone_dim = " << cfg.backbone_dim << "\n";
    out << "hidden_dim = " << cfg.hidden_dim << "\n";
    out << "embed_dim = " << cfg.embed_dim << "\n";
    out << "naive_self_scheme = " << cfg.naive_self_scheme << "\n";
    out << "naive_full_scheme = " << cfg.naive_full_scheme << "\n";
    out << "naive_w_p_self = " << format_real(cfg.naive_w_p_self) << "\n";
    out << "naive_w_n_self = " << format_real(cfg.naive_w_n_self) << "\n";
    out << "naive_w_p_full = " << format_real(cfg.naive_w_p_full) << "\n";
    out << "naive_w_n_full = " << format_real(cfg.naive_w_n_full) << "\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    return out.str();
}

}  // namespace opera
