#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cellgraph {

enum class ParamKind { uniform, log_uniform, integer, categorical };

/// One searchable parameter. Categorical values are reported as the index
/// into `choices`; integers are drawn uniformly on [lo, hi] and rounded.
struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::uniform;
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::string> choices;
};

using SearchSpace = std::vector<ParamSpec>;
using ParamValues = std::map<std::string, double>;

struct Trial {
    ParamValues params;
    double score = 0.0;  // -inf when the objective threw
    std::string error;
};

struct SearchResult {
    std::vector<Trial> trials;
    std::size_t best = 0;

    const Trial& best_trial() const { return trials.at(best); }
};

/// Validates the space; throws Error on empty names, lo >= hi, lo <= 0 for
/// log-uniform, or a categorical without choices.
void check_space(const SearchSpace& space);

/// Sequential model-based search maximising `objective`. The first
/// max(5, budget / 5) trials are uniform draws; later trials pick, among
/// candidates sampled around the good trials (top quarter by score), the one
/// with the largest good/bad Parzen density ratio. Best = highest score,
/// earliest trial on ties. An objective that throws scores -inf.
SearchResult hyperparameter_search(const SearchSpace& space, const std::function<double(const ParamValues&)>& objective,
                                   int budget, std::uint64_t seed);

}  // namespace cellgraph
