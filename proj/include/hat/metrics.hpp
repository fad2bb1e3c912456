#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hat/core.hpp"
#include "hat/simulator.hpp"

namespace hat {

/// n-gram key -> relative frequency. Tokens of one n-gram are joined with
/// the unit separator byte 0x1f.
using NGramDistribution = std::map<std::string, double>;

/// Relative frequencies over the union of all n-grams of the given orders.
/// Throws metric error on an empty corpus.
NGramDistribution ngram_distribution(std::span<const TokenSeq> corpus, std::span<const int> orders);
NGramDistribution ngram_distribution(std::span<const TokenSeq> corpus);  // orders {1, 2}

/// Jensen-Shannon divergence in bits, in [0, 1].
double js_divergence(const NGramDistribution& p, const NGramDistribution& q);

inline constexpr double kDefaultTtrThreshold = 0.72;

/// Bidirectional MTLD (McCarthy). Returns |tokens| when no factor completes
/// and the text ends with every token distinct.
double mtld(std::span<const std::string> tokens, double ttr_threshold = kDefaultTtrThreshold);

/// MTLD of the concatenation of a corpus in its given order.
double corpus_mtld(std::span<const TokenSeq> corpus, double ttr_threshold = kDefaultTtrThreshold);

/// Fraction of `selected` whose back-translated machine translation realizes
/// a different LF. Throws metric error when empty.
double bt_discrepancy_rate(std::span<const Example> selected, const Oracles& oracles);

struct FrontierOptions {
    std::size_t grid = 100;  // lambda steps between 0 and 1
    double scale = 5.0;      // c in exp(-c KL)
    std::uint64_t seed = 0;
};

/// Area under the divergence frontier of the two feature sets' histograms
/// over a shared k-means codebook with `n_bins` codes. The codebook is fit on
/// the distinct vectors of the union. 1 iff the histograms coincide.
double divergence_frontier(std::span<const FeatureVector> p_features, std::span<const FeatureVector> q_features,
                           std::size_t n_bins, const FrontierOptions& options = {});

/// Same area computed directly from two histograms over a common support.
double frontier_area(std::span<const double> p, std::span<const double> q, const FrontierOptions& options = {});

}  // namespace hat
