#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cellgraph {

/// Boolean node masks. Unlabelled nodes belong to none of them.
struct SplitMasks {
    std::vector<std::uint8_t> train, val, test;

    std::size_t size() const { return train.size(); }
    std::vector<std::size_t> train_idx() const;
    std::vector<std::size_t> val_idx() const;
    std::vector<std::size_t> test_idx() const;
};

/// Per class: shuffle, take floor(r0 n_c) train and floor(r1 n_c) val, the
/// rest test. Labels < 0 are unlabelled.
SplitMasks stratified_split(std::span<const int> labels, std::array<double, 3> ratios = {0.7, 0.1, 0.2},
                            std::uint64_t seed = 0);

/// Case-level variant: whole samples go to one split, stratified by whether
/// the sample holds any positive (label 1) cell.
SplitMasks sample_level_split(std::span<const int> labels, std::span<const std::string> sample_ids,
                              std::array<double, 3> ratios = {0.7, 0.1, 0.2}, std::uint64_t seed = 0);

}  // namespace cellgraph
