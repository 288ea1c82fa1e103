#pragma once

// Two-level labels: an instance id (which source sample a view came from)
// and a class id. The label spaces are hierarchical: views of one instance
// always belong to one class, so same-instance implies same-class.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "opera/errors.hpp"

namespace opera {

struct LabelPair {
    std::uint64_t instance_id = 0;
    std::uint64_t class_id = 0;

    bool operator==(const LabelPair&) const = default;
};

struct PairRelation {
    bool same_instance = false;
    bool same_class = false;

    bool operator==(const PairRelation&) const = default;
};

inline PairRelation relate(const LabelPair& a, const LabelPair& b) {
    PairRelation r;
    r.same_instance = (a.instance_id == b.instance_id);
    r.same_class = (a.class_id == b.class_id);
    if (r.same_instance && !r.same_class) {
        throw ConsistencyError("labels share instance_id " + std::to_string(a.instance_id) +
                               " but have class_ids " + std::to_string(a.class_id) + " and " +
                               std::to_string(b.class_id));
    }
    return r;
}

struct HierarchyViolation {
    std::size_t first_index = 0;
    std::size_t second_index = 0;
    std::uint64_t instance_id = 0;
};

// ok (nullopt) iff no instance_id maps to two different class_ids.
inline std::optional<HierarchyViolation> validate_dataset(const std::vector<LabelPair>& labels) {
    std::unordered_map<std::uint64_t, std::size_t> first_seen;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto [it, inserted] = first_seen.emplace(labels[i].instance_id, i);
        if (!inserted && labels[it->second].class_id != labels[i].class_id) {
            return HierarchyViolation{it->second, i, labels[i].instance_id};
        }
    }
    return std::nullopt;
}

}  // namespace opera
