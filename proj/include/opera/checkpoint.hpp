#pragma once

// Plain-text checkpoint format, version tagged and diff-able:
//
//   OPERA-CKPT v1
//   tensor <name> <rank> <dim0> [<dim1> ...]
//   <values, space separated, row major, %.17g>
//
// Values printed with 17 significant digits parse back to the identical
// double, so save -> load -> save is byte-identical.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "opera/errors.hpp"
#include "opera/model.hpp"
#include "opera/rng.hpp"

namespace opera {

namespace detail {

inline std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<TensorRef> all_online_tensors(HierarchyModel& model) {
    std::vector<TensorRef> refs;
    append_stack_tensors(model.backbone, "online.backbone", true, refs);
    append_stack_tensors(model.projector, "online.projector", true, refs);
    append_stack_tensors(model.predictor, "online.predictor", true, refs);
    append_stack_tensors(model.class_head, "online.class_head", true, refs);
    return refs;
}

inline std::vector<TensorRef> all_target_tensors(TargetNetwork& target) {
    std::vector<TensorRef> refs;
    append_stack_tensors(target.backbone, "target.backbone", true, refs);
    append_stack_tensors(target.projector, "target.projector", true, refs);
    return refs;
}

}  // namespace detail

struct CheckpointExtras {
    double tau = 0.2;
    bool normalize = true;
};

inline void save_checkpoint(const std::string& path, OnlineTargetPair& pair,
                            const CheckpointExtras& extras = {}) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write checkpoint '" + path + "'");
    out << "OPERA-CKPT v1\n";

    const auto scalar = [&out](const std::string& name, double v) {
        out << "tensor " << name << " 1 1\n" << detail::format_value(v) << "\n";
    };
    const ModelConfig& cfg = pair.online.config;
    scalar("meta.arrangement", static_cast<double>(static_cast<int>(cfg.arrangement)));
    scalar("meta.input_dim", static_cast<double>(cfg.input_dim));
    scalar("meta.backbone_hidden", static_cast<double>(cfg.backbone_hidden));
    scalar("meta.backbone_dim", static_cast<double>(cfg.backbone_dim));
    scalar("meta.hidden_dim", static_cast<double>(cfg.hidden_dim));
    scalar("meta.embed_dim", static_cast<double>(cfg.embed_dim));
    scalar("meta.num_classes", static_cast<double>(cfg.num_classes));
    scalar("meta.ema_momentum", pair.momentum);
    scalar("meta.tau", extras.tau);
    scalar("meta.normalize", extras.normalize ? 1.0 : 0.0);

    auto refs = detail::all_online_tensors(pair.online);
    const auto target_refs = detail::all_target_tensors(pair.target);
    refs.insert(refs.end(), target_refs.begin(), target_refs.end());
    for (const auto& ref : refs) {
        out << "tensor " << ref.name << " " << ref.shape.size();
        for (const std::size_t d : ref.shape) out << " " << d;
        out << "\n";
        const auto& values = *ref.values;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) out << " ";
            out << detail::format_value(values[i]);
        }
        out << "\n";
    }
}

struct LoadedCheckpoint {
    OnlineTargetPair pair;
    CheckpointExtras extras;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open checkpoint '" + path + "'");

    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError("checkpoint '" + path + "' is empty");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "OPERA-CKPT v1")
        throw ParseError("line 1: bad header '" + line + "' (expected OPERA-CKPT v1)");

    struct Entry {
        std::vector<std::size_t> shape;
        std::vector<double> values;
    };
    std::map<std::string, Entry> entries;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream header(line);
        std::string tag, name;
        std::size_t rank = 0;
        if (!(header >> tag >> name >> rank) || tag != "tensor")
            throw ParseError("line " + std::to_string(line_no) + ": expected 'tensor <name> <rank> <dims>'");
        Entry entry;
        std::size_t expected = 1;
        for (std::size_t r = 0; r < rank; ++r) {
            std::size_t d = 0;
            if (!(header >> d))
                throw ParseError("line " + std::to_string(line_no) + ": missing dimension " +
                                 std::to_string(r) + " for tensor " + name);
            entry.shape.push_back(d);
            expected *= d;
        }
        if (!std::getline(in, line))
            throw ParseError("line " + std::to_string(line_no + 1) + ": unexpected end of file in tensor " + name);
        ++line_no;
        entry.values.reserve(expected);
        const char* cursor = line.c_str();
        char* next = nullptr;
        while (true) {
            const double v = std::strtod(cursor, &next);
            if (next == cursor) break;
            entry.values.push_back(v);
            cursor = next;
        }
        if (entry.values.size() != expected)
            throw ParseError("line " + std::to_string(line_no) + ": tensor " + name + " expected " +
                             std::to_string(expected) + " values, got " +
                             std::to_string(entry.values.size()));
        if (!entries.emplace(name, std::move(entry)).second)
            throw ParseError("line " + std::to_string(line_no) + ": duplicate tensor " + name);
    }

    const auto meta = [&entries, &path](const std::string& name) {
        const auto it = entries.find(name);
        if (it == entries.end())
            throw ParseError("checkpoint '" + path + "': missing " + name);
        return it->second.values.at(0);
    };

    ModelConfig cfg;
    const int arrangement = static_cast<int>(meta("meta.arrangement"));
    if (arrangement < 0 || arrangement > 2)
        throw ParseError("checkpoint '" + path + "': bad meta.arrangement");
    cfg.arrangement = static_cast<Arrangement>(arrangement);
    cfg.input_dim = static_cast<std::size_t>(meta("meta.input_dim"));
    cfg.backbone_hidden = static_cast<std::size_t>(meta("meta.backbone_hidden"));
    cfg.backbone_dim = static_cast<std::size_t>(meta("meta.backbone_dim"));
    cfg.hidden_dim = static_cast<std::size_t>(meta("meta.hidden_dim"));
    cfg.embed_dim = static_cast<std::size_t>(meta("meta.embed_dim"));
    cfg.num_classes = static_cast<std::size_t>(meta("meta.num_classes"));

    LoadedCheckpoint loaded;
    Rng scratch(0);
    loaded.pair = make_online_target_pair(cfg, scratch, meta("meta.ema_momentum"));
    loaded.extras.tau = meta("meta.tau");
    loaded.extras.normalize = meta("meta.normalize") != 0.0;

    auto refs = detail::all_online_tensors(loaded.pair.online);
    const auto target_refs = detail::all_target_tensors(loaded.pair.target);
    refs.insert(refs.end(), target_refs.begin(), target_refs.end());
    std::size_t consumed = 10;  // the meta scalars
    for (auto& ref : refs) {
        const auto it = entries.find(ref.name);
        if (it == entries.end())
            throw ParseError("checkpoint '" + path + "': missing tensor " + ref.name);
        if (it->second.shape != ref.shape)
            throw ParseError("checkpoint '" + path + "': tensor " + ref.name + " has wrong shape");
        *ref.values = it->second.values;
        ++consumed;
    }
    if (consumed != entries.size())
        throw ParseError("checkpoint '" + path + "': " +
                         std::to_string(entries.size() - consumed) + " unrecognized tensors");
    return loaded;
}

}  // namespace opera
