#include "cellgraph/split.hpp"

#include <cmath>
#include <map>

#include "cellgraph/error.hpp"
#include "cellgraph/random.hpp"

namespace cellgraph {

namespace {

std::vector<std::size_t> indices(const std::vector<std::uint8_t>& mask) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) out.push_back(i);
    }
    return out;
}

void check_ratios(const std::array<double, 3>& r) {
    for (double v : r) {
        if (!(v >= 0.0)) throw Error("split: ratios must be non-negative");
    }
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw Error("split: ratios must sum to 1");
}

// Shuffles `items` and returns the cut points (train end, val end).
template <class T>
std::pair<std::size_t, std::size_t> shuffle_and_cut(std::vector<T>& items, const std::array<double, 3>& r, Rng& rng) {
    rng.shuffle(items.begin(), items.end());
    const double n = double(items.size());
    // Nudge guards against 0.7 * 10 evaluating to 6.999...
    const auto n_train = std::size_t(std::floor(r[0] * n + 1e-9));
    const auto n_val = std::size_t(std::floor(r[1] * n + 1e-9));
    return {n_train, n_train + n_val};
}

}  // namespace

std::vector<std::size_t> SplitMasks::train_idx() const { return indices(train); }
std::vector<std::size_t> SplitMasks::val_idx() const { return indices(val); }
std::vector<std::size_t> SplitMasks::test_idx() const { return indices(test); }

SplitMasks stratified_split(std::span<const int> labels, std::array<double, 3> ratios, std::uint64_t seed) {
    check_ratios(ratios);
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= 0) by_class[labels[i]].push_back(i);
    }
    if (by_class.empty()) throw Error("stratified_split: no labelled nodes");

    SplitMasks m;
    m.train.assign(labels.size(), 0);
    m.val.assign(labels.size(), 0);
    m.test.assign(labels.size(), 0);
    for (auto& [cls, nodes] : by_class) {
        Rng rng(derive_seed(seed, std::uint64_t(cls)));
        const auto [a, b] = shuffle_and_cut(nodes, ratios, rng);
        for (std::size_t t = 0; t < nodes.size(); ++t) {
            (t < a ? m.train : t < b ? m.val : m.test)[nodes[t]] = 1;
        }
    }
    return m;
}

SplitMasks sample_level_split(std::span<const int> labels, std::span<const std::string> sample_ids,
                              std::array<double, 3> ratios, std::uint64_t seed) {
    check_ratios(ratios);
    if (labels.size() != sample_ids.size()) throw Error("sample_level_split: label and sample id counts differ");
    std::map<std::string, int> sample_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int& c = sample_class.try_emplace(sample_ids[i], 0).first->second;
        if (labels[i] == 1) c = 1;
    }
    std::map<int, std::vector<std::string>> strata;
    for (const auto& [sid, c] : sample_class) strata[c].push_back(sid);

    std::map<std::string, int> which;  // 0 train, 1 val, 2 test
    for (auto& [cls, sids] : strata) {
        Rng rng(derive_seed(seed, std::uint64_t(cls)));
        const auto [a, b] = shuffle_and_cut(sids, ratios, rng);
        for (std::size_t t = 0; t < sids.size(); ++t) which[sids[t]] = t < a ? 0 : t < b ? 1 : 2;
    }
    SplitMasks m;
    m.train.assign(labels.size(), 0);
    m.val.assign(labels.size(), 0);
    m.test.assign(labels.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        any = true;
        const int w = which[sample_ids[i]];
        (w == 0 ? m.train : w == 1 ? m.val : m.test)[i] = 1;
    }
    if (!any) throw Error("sample_level_split: no labelled nodes");
    return m;
}

}  // namespace cellgraph
