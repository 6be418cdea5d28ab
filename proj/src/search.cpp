#include "cellgraph/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellgraph/error.hpp"
#include "cellgraph/random.hpp"

namespace cellgraph {

namespace {

constexpr int kCandidates = 24;
constexpr double kGoodQuantile = 0.25;

double to_unit(const ParamSpec& p, double v) {
    switch (p.kind) {
        case ParamKind::log_uniform: return (std::log(v) - std::log(p.lo)) / (std::log(p.hi) - std::log(p.lo));
        case ParamKind::categorical: return v;
        default: return (v - p.lo) / (p.hi - p.lo);
    }
}

double from_unit(const ParamSpec& p, double u) {
    u = std::clamp(u, 0.0, 1.0);
    switch (p.kind) {
        case ParamKind::log_uniform: return std::exp(std::log(p.lo) + u * (std::log(p.hi) - std::log(p.lo)));
        case ParamKind::integer: return std::round(p.lo + u * (p.hi - p.lo));
        default: return p.lo + u * (p.hi - p.lo);
    }
}

ParamValues random_draw(const SearchSpace& space, Rng& rng) {
    ParamValues out;
    for (const auto& p : space) {
        if (p.kind == ParamKind::categorical) {
            out[p.name] = double(rng.below(p.choices.size()));
        } else if (p.kind == ParamKind::integer) {
            const auto span = std::uint64_t(std::llround(p.hi - p.lo)) + 1;
            out[p.name] = p.lo + double(rng.below(span));
        } else {
            out[p.name] = from_unit(p, rng.uniform());
        }
    }
    return out;
}

// Gaussian kernels in unit space plus a uniform prior component.
struct Parzen {
    std::vector<double> centers;
    double bandwidth = 0.25;

    explicit Parzen(std::vector<double> c) : centers(std::move(c)) {
        const double m = double(centers.size());
        if (centers.size() >= 2) {
            const double mean = std::accumulate(centers.begin(), centers.end(), 0.0) / m;
            double ss = 0.0;
            for (double x : centers) ss += (x - mean) * (x - mean);
            bandwidth = 1.06 * std::sqrt(ss / (m - 1)) * std::pow(m, -0.2);
        }
        bandwidth = std::clamp(bandwidth, 0.05, 0.5);
    }

    double density(double u) const {
        double sum = 1.0;  // uniform prior on [0, 1]
        const double norm = 1.0 / (bandwidth * std::sqrt(2.0 * 3.14159265358979323846));
        for (double c : centers) {
            const double z = (u - c) / bandwidth;
            sum += norm * std::exp(-0.5 * z * z);
        }
        return sum / double(centers.size() + 1);
    }
};

double categorical_prob(const std::vector<double>& values, std::size_t n_choices, double v) {
    double count = 1.0;
    for (double x : values) count += x == v ? 1.0 : 0.0;
    return count / (double(values.size()) + double(n_choices));
}

}  // namespace

void check_space(const SearchSpace& space) {
    for (const auto& p : space) {
        if (p.name.empty()) throw Error("search space: parameter without a name");
        if (p.kind == ParamKind::categorical) {
            if (p.choices.empty()) throw Error("search space: categorical '" + p.name + "' has no choices");
            continue;
        }
        if (!(p.lo < p.hi) || !std::isfinite(p.lo) || !std::isfinite(p.hi)) {
            throw Error("search space: '" + p.name + "' needs lo < hi");
        }
        if (p.kind == ParamKind::log_uniform && p.lo <= 0.0) {
            throw Error("search space: log-uniform '" + p.name + "' needs lo > 0");
        }
    }
}

SearchResult hyperparameter_search(const SearchSpace& space, const std::function<double(const ParamValues&)>& objective,
                                   int budget, std::uint64_t seed) {
    if (budget < 1) throw Error("hyperparameter search: budget must be >= 1");
    check_space(space);
    Rng rng(seed);
    const int n_startup = std::max(5, budget / 5);
    SearchResult result;

    for (int t = 0; t < budget; ++t) {
        ParamValues params;
        if (t < n_startup || space.empty()) {
            params = random_draw(space, rng);
        } else {
            // Rank observed trials, best first; stable so earlier trials win ties.
            std::vector<std::size_t> order(result.trials.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return result.trials[a].score > result.trials[b].score;
            });
            const auto n_good = std::max<std::size_t>(1, std::size_t(std::ceil(kGoodQuantile * double(order.size()))));

            std::vector<Parzen> good_kde, bad_kde;
            std::vector<std::vector<double>> good_vals(space.size()), bad_vals(space.size());
            for (std::size_t r = 0; r < order.size(); ++r) {
                const auto& tr = result.trials[order[r]];
                for (std::size_t j = 0; j < space.size(); ++j) {
                    (r < n_good ? good_vals : bad_vals)[j].push_back(to_unit(space[j], tr.params.at(space[j].name)));
                }
            }
            for (std::size_t j = 0; j < space.size(); ++j) {
                good_kde.emplace_back(good_vals[j]);
                bad_kde.emplace_back(bad_vals[j]);
            }

            double best_ratio = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < kCandidates; ++c) {
                const std::size_t anchor = rng.below(n_good);
                ParamValues cand;
                double log_ratio = 0.0;
                for (std::size_t j = 0; j < space.size(); ++j) {
                    const auto& p = space[j];
                    double v;
                    if (p.kind == ParamKind::categorical) {
                        // Draw from the smoothed good-set frequencies.
                        double u = rng.uniform(), acc = 0.0;
                        v = double(p.choices.size() - 1);
                        for (std::size_t k = 0; k < p.choices.size(); ++k) {
                            acc += categorical_prob(good_vals[j], p.choices.size(), double(k));
                            if (u < acc) {
                                v = double(k);
                                break;
                            }
                        }
                        log_ratio += std::log(categorical_prob(good_vals[j], p.choices.size(), v)) -
                                     std::log(categorical_prob(bad_vals[j], p.choices.size(), v));
                    } else {
                        const double u = good_vals[j][anchor] + good_kde[j].bandwidth * rng.normal();
                        v = from_unit(p, u);
                        const double uv = to_unit(p, v);
                        log_ratio += std::log(good_kde[j].density(uv)) - std::log(bad_kde[j].density(uv));
                    }
                    cand[p.name] = v;
                }
                if (log_ratio > best_ratio) {
                    best_ratio = log_ratio;
                    params = std::move(cand);
                }
            }
        }

        Trial trial;
        trial.params = params;
        try {
            trial.score = objective(params);
            if (std::isnan(trial.score)) trial.score = -std::numeric_limits<double>::infinity();
        } catch (const std::exception& e) {
            trial.score = -std::numeric_limits<double>::infinity();
            trial.error = e.what();
        }
        result.trials.push_back(std::move(trial));
        if (result.trials.back().score > result.trials[result.best].score) result.best = result.trials.size() - 1;
    }
    return result;
}

}  // namespace cellgraph
