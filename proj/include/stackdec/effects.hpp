#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "stackdec/common.hpp"

namespace stackdec {

// Index set theta identifying which features a subfunction depends on.
// Indices are 1-based, strictly increasing; the empty set is the intercept.
class EffectIndex {
public:
    EffectIndex() = default;

    explicit EffectIndex(std::vector<int> indices) : indices_(std::move(indices)) {
        std::sort(indices_.begin(), indices_.end());
        for (size_t i = 0; i < indices_.size(); ++i) {
            if (indices_[i] < 1)
                throw ValidationError("effect index must be >= 1, got " + std::to_string(indices_[i]));
            if (i > 0 && indices_[i] == indices_[i - 1])
                throw ValidationError("duplicate feature index " + std::to_string(indices_[i]) + " in effect");
        }
    }

    static EffectIndex intercept() { return EffectIndex{}; }

    static EffectIndex full(int d) {
        std::vector<int> v(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) v[static_cast<size_t>(j)] = j + 1;
        return EffectIndex(std::move(v));
    }

    const std::vector<int>& indices() const { return indices_; }
    int level() const { return static_cast<int>(indices_.size()); }
    bool is_intercept() const { return indices_.empty(); }

    bool within(int d) const {
        return indices_.empty() || indices_.back() <= d;
    }

    // canonical order: level ascending, then lexicographic
    bool operator<(const EffectIndex& o) const {
        if (level() != o.level()) return level() < o.level();
        return indices_ < o.indices_;
    }
    bool operator==(const EffectIndex& o) const { return indices_ == o.indices_; }
    bool operator!=(const EffectIndex& o) const { return !(*this == o); }

    // "intercept", "3", "1_2", ... (used for filenames and JSON keys)
    std::string key() const {
        if (indices_.empty()) return "intercept";
        std::string s;
        for (size_t i = 0; i < indices_.size(); ++i) {
            if (i) s += '_';
            s += std::to_string(indices_[i]);
        }
        return s;
    }

private:
    std::vector<int> indices_;
};

// Ordered collection of non-intercept effect terms over d features.
// In restricted mode (effects of interest) the full-order term is present and
// absorbs everything not listed.
struct EffectSet {
    int d = 0;
    std::vector<EffectIndex> terms;  // canonical order, intercept excluded
    bool restricted = false;

    int term_count() const { return static_cast<int>(terms.size()); }

    int find(const EffectIndex& theta) const {
        for (size_t i = 0; i < terms.size(); ++i)
            if (terms[i] == theta) return static_cast<int>(i);
        return -1;
    }

    std::vector<int> levels_present() const {
        std::set<int> s;
        for (const auto& t : terms) s.insert(t.level());
        return {s.begin(), s.end()};
    }

    int max_level() const {
        int m = 0;
        for (const auto& t : terms) m = std::max(m, t.level());
        return m;
    }
};

inline constexpr int kEnumerationCap = 12;

// All 2^d - 1 non-empty subsets in canonical order.
inline EffectSet enumerate_full(int d, int cap = kEnumerationCap) {
    if (d < 1) throw ValidationError("feature count must be >= 1, got " + std::to_string(d));
    if (d > cap)
        throw ValidationError("full enumeration of d=" + std::to_string(d) +
                              " exceeds cap " + std::to_string(cap) +
                              " (2^d-1 terms); use restrict_to with the effects of interest");
    EffectSet set;
    set.d = d;
    set.restricted = false;
    for (uint32_t mask = 1; mask < (uint32_t{1} << d); ++mask) {
        std::vector<int> idx;
        for (int j = 0; j < d; ++j)
            if (mask & (uint32_t{1} << j)) idx.push_back(j + 1);
        set.terms.emplace_back(std::move(idx));
    }
    std::sort(set.terms.begin(), set.terms.end());
    return set;
}

// Effects-of-interest restriction: the returned set is Theta together with the
// full-order term {1..d}, which absorbs all non-listed effects.
inline EffectSet restrict_to(const std::vector<EffectIndex>& theta_list, int d) {
    if (d < 1) throw ValidationError("feature count must be >= 1, got " + std::to_string(d));
    if (theta_list.empty()) throw ValidationError("effects-of-interest list must be non-empty");
    std::set<EffectIndex> uniq;
    for (const auto& t : theta_list) {
        if (t.is_intercept())
            throw ValidationError("the intercept cannot be listed as an effect of interest");
        if (!t.within(d))
            throw ValidationError("effect {" + t.key() + "} has indices outside 1.." + std::to_string(d));
        uniq.insert(t);
    }
    uniq.insert(EffectIndex::full(d));
    EffectSet set;
    set.d = d;
    set.restricted = true;
    set.terms.assign(uniq.begin(), uniq.end());
    return set;
}

struct LevelPartition {
    std::vector<EffectIndex> actual;  // level == k
    std::vector<EffectIndex> lower;   // level < k, intercept included
    std::vector<EffectIndex> higher;  // level > k
};

inline LevelPartition level_partition(const EffectSet& set, int k) {
    if (k < 1 || k > set.d)
        throw ValidationError("level k=" + std::to_string(k) + " out of range 1.." + std::to_string(set.d));
    LevelPartition p;
    p.lower.push_back(EffectIndex::intercept());
    for (const auto& t : set.terms) {
        if (t.level() == k)
            p.actual.push_back(t);
        else if (t.level() < k)
            p.lower.push_back(t);
        else
            p.higher.push_back(t);
    }
    return p;
}

}  // namespace stackdec
