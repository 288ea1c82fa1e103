#pragma once

// Synthetic blob datasets, the two-view augmentation operator, and CSV
// ingestion. Class centers live on the unit sphere; samples scatter around
// them with a configurable spread. instance_id is the row index assigned
// before augmentation, so both views of a sample carry the same LabelPair.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "opera/errors.hpp"
#include "opera/labels.hpp"
#include "opera/matrix.hpp"
#include "opera/rng.hpp"

namespace opera {

struct Dataset {
    Matrix features;  // N x D
    std::vector<LabelPair> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
};

inline void validate(const Dataset& data) {
    if (data.features.rows() != data.labels.size())
        throw ShapeError("dataset: feature rows and labels disagree");
    if (const auto violation = validate_dataset(data.labels)) {
        throw ConsistencyError("dataset: instance " + std::to_string(violation->instance_id) +
                               " maps to two classes (rows " +
                               std::to_string(violation->first_index) + ", " +
                               std::to_string(violation->second_index) + ")");
    }
    for (const auto& l : data.labels)
        if (l.class_id >= data.num_classes)
            throw ConsistencyError("dataset: class id " + std::to_string(l.class_id) +
                                   " outside [0, " + std::to_string(data.num_classes) + ")");
}

struct AugmentConfig {
    double noise_sigma = 0.1;
    double scale_lo = 0.9;
    double scale_hi = 1.1;
    double mask_prob = 0.0;

    void check() const {
        if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
        if (!(scale_lo > 0.0) || scale_lo > scale_hi)
            throw ConfigError("scale range must satisfy 0 < lo <= hi");
        if (mask_prob < 0.0 || mask_prob >= 1.0) throw ConfigError("mask_prob must be in [0, 1)");
    }
};

inline Dataset make_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                          double spread, Rng& rng) {
    if (num_classes < 1 || per_class < 1 || dim < 1)
        throw DomainError("make_blobs: counts must be >= 1");
    if (spread < 0.0) throw DomainError("make_blobs: spread must be >= 0");

    std::vector<Vector> centers;
    centers.reserve(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        Vector v = rng.gauss_vector(dim);
        double n = norm2(v);
        while (n < 1e-12) {
            v = rng.gauss_vector(dim);
            n = norm2(v);
        }
        for (double& x : v) x /= n;
        centers.push_back(std::move(v));
    }

    Dataset data;
    data.num_classes = num_classes;
    data.features = Matrix(num_classes * per_class, dim);
    std::size_t row = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            double* out = data.features.row_ptr(row);
            for (std::size_t j = 0; j < dim; ++j) out[j] = centers[c][j] + spread * rng.gauss();
            data.labels.push_back({row, c});
        }
    }
    validate(data);
    return data;
}

// One augmented view: scale the vector, add isotropic noise, then zero a
// random subset of coordinates. Draw order per view: scale, noise (only
// when sigma > 0), mask (only when mask_prob > 0).
inline Vector augment_view(const Vector& x, const AugmentConfig& cfg, Rng& rng) {
    cfg.check();
    const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    Vector v(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) v[j] = s * x[j];
    if (cfg.noise_sigma > 0.0)
        for (double& e : v) e += cfg.noise_sigma * rng.gauss();
    if (cfg.mask_prob > 0.0)
        for (double& e : v)
            if (rng.uniform() < cfg.mask_prob) e = 0.0;
    return v;
}

// Two independent augmentations of the same sample; they share its labels.
inline std::pair<Vector, Vector> two_views(const Vector& x, const AugmentConfig& cfg, Rng& rng) {
    Vector v1 = augment_view(x, cfg, rng);
    Vector v2 = augment_view(x, cfg, rng);
    return {std::move(v1), std::move(v2)};
}

// ---------------------------------------------------------------------------
// CSV: header f0,...,f{D-1},instance_id,class_id; one sample per line
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline double parse_double_field(const std::string& s, std::size_t line_no) {
    std::size_t consumed = 0;
    double value = 0.0;
    try {
        value = std::stod(s, &consumed);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": not a number: '" + s + "'");
    }
    if (consumed != s.size())
        throw ParseError("line " + std::to_string(line_no) + ": trailing characters in '" + s + "'");
    return value;
}

inline std::uint64_t parse_id_field(const std::string& s, std::size_t line_no) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ParseError("line " + std::to_string(line_no) + ": not a nonnegative integer: '" + s +
                         "'");
    return std::stoull(s);
}

}  // namespace detail

inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[header.size() - 2] != "instance_id" ||
        header.back() != "class_id")
        throw ParseError("line 1: header must be f0,...,f{D-1},instance_id,class_id");
    const std::size_t dim = header.size() - 2;
    for (std::size_t j = 0; j < dim; ++j)
        if (header[j] != "f" + std::to_string(j))
            throw ParseError("line 1: expected column f" + std::to_string(j) + ", got '" +
                             header[j] + "'");

    std::vector<double> values;
    std::vector<LabelPair> labels;
    std::size_t line_no = 1;
    std::uint64_t max_class = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != dim + 2)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(dim + 2) + " columns, got " +
                             std::to_string(fields.size()));
        for (std::size_t j = 0; j < dim; ++j)
            values.push_back(detail::parse_double_field(fields[j], line_no));
        LabelPair label;
        label.instance_id = detail::parse_id_field(fields[dim], line_no);
        label.class_id = detail::parse_id_field(fields[dim + 1], line_no);
        max_class = std::max(max_class, label.class_id);
        labels.push_back(label);
    }

    Dataset data;
    data.features = Matrix(labels.size(), dim, std::move(values));
    data.labels = std::move(labels);
    data.num_classes = data.labels.empty() ? 0 : static_cast<std::size_t>(max_class) + 1;
    validate(data);
    require_finite(data.features, "load_csv features");
    return data;
}

inline void save_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    for (std::size_t j = 0; j < data.dim(); ++j) out << "f" << j << ",";
    out << "instance_id,class_id\n";
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data.dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.features(i, j));
            out << buf << ",";
        }
        out << data.labels[i].instance_id << "," << data.labels[i].class_id << "\n";
    }
}

}  // namespace opera
