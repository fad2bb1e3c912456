#include "hat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_set>

#include "hat/error.hpp"
#include "hat/geometry.hpp"

namespace hat {

namespace {

constexpr char kJoin = '\x1f';
constexpr int kDefaultOrders[] = {1, 2};

double kl_nats(std::span<const double> p, std::span<const double> r) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (r[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / r[i]);
    }
    return std::max(0.0, kl);
}

double mtld_pass(std::span<const std::string> tokens, double threshold, bool reverse) {
    double factors = 0.0;
    std::unordered_set<std::string> types;
    std::size_t count = 0;
    double ttr = 1.0;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        const auto& t = tokens[reverse ? tokens.size() - 1 - k : k];
        types.insert(t);
        ++count;
        ttr = static_cast<double>(types.size()) / static_cast<double>(count);
        if (ttr < threshold) {
            factors += 1.0;
            types.clear();
            count = 0;
            ttr = 1.0;
        }
    }
    if (count > 0) factors += (1.0 - ttr) / (1.0 - threshold);
    if (factors == 0.0) return static_cast<double>(tokens.size());
    return static_cast<double>(tokens.size()) / factors;
}

}  // namespace

NGramDistribution ngram_distribution(std::span<const TokenSeq> corpus, std::span<const int> orders) {
    if (corpus.empty()) throw Error(ErrorCode::metric, "n-gram distribution of an empty corpus");
    if (orders.empty()) throw Error(ErrorCode::metric, "no n-gram orders given");
    std::map<std::string, std::size_t> counts;
    std::size_t total = 0;
    for (const auto& sentence : corpus) {
        for (int order : orders) {
            if (order < 1) throw Error(ErrorCode::metric, "n-gram order must be positive");
            const auto n = static_cast<std::size_t>(order);
            for (std::size_t i = 0; i + n <= sentence.size(); ++i) {
                std::string key = sentence[i];
                for (std::size_t k = 1; k < n; ++k) (key += kJoin) += sentence[i + k];
                ++counts[key];
                ++total;
            }
        }
    }
    if (total == 0) throw Error(ErrorCode::metric, "corpus has no n-grams");
    NGramDistribution out;
    for (const auto& [k, c] : counts) out[k] = static_cast<double>(c) / static_cast<double>(total);
    return out;
}

NGramDistribution ngram_distribution(std::span<const TokenSeq> corpus) {
    return ngram_distribution(corpus, kDefaultOrders);
}

double js_divergence(const NGramDistribution& p, const NGramDistribution& q) {
    auto term = [](double a, double m) { return a > 0.0 ? a * std::log2(a / m) : 0.0; };
    double js = 0.0;
    auto pi = p.begin();
    auto qi = q.begin();
    // Merge over the sorted union of keys.
    while (pi != p.end() || qi != q.end()) {
        double a = 0.0, b = 0.0;
        if (qi == q.end() || (pi != p.end() && pi->first < qi->first)) {
            a = (pi++)->second;
        } else if (pi == p.end() || qi->first < pi->first) {
            b = (qi++)->second;
        } else {
            a = (pi++)->second;
            b = (qi++)->second;
        }
        double m = 0.5 * (a + b);
        js += 0.5 * term(a, m) + 0.5 * term(b, m);
    }
    return std::clamp(js, 0.0, 1.0);
}

double mtld(std::span<const std::string> tokens, double ttr_threshold) {
    if (tokens.empty()) throw Error(ErrorCode::metric, "MTLD of an empty text");
    if (!(ttr_threshold > 0.0 && ttr_threshold < 1.0)) throw Error(ErrorCode::metric, "TTR threshold must lie in (0, 1)");
    return 0.5 * (mtld_pass(tokens, ttr_threshold, false) + mtld_pass(tokens, ttr_threshold, true));
}

double corpus_mtld(std::span<const TokenSeq> corpus, double ttr_threshold) {
    TokenSeq all;
    for (const auto& s : corpus) all.insert(all.end(), s.begin(), s.end());
    return mtld(all, ttr_threshold);
}

double bt_discrepancy_rate(std::span<const Example> selected, const Oracles& oracles) {
    if (selected.empty()) throw Error(ErrorCode::metric, "BT discrepancy of an empty selection");
    std::size_t wrong = 0;
    for (const auto& e : selected) {
        Utterance round_trip = oracles.bt(oracles.mt(e.utterance));
        if (oracles.realized_source_lf(round_trip.tokens) != static_cast<int>(oracles.lf_index(e.lf))) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(selected.size());
}

double frontier_area(std::span<const double> p, std::span<const double> q, const FrontierOptions& options) {
    if (p.size() != q.size() || p.empty()) throw Error(ErrorCode::metric, "histograms must share a non-empty support");
    if (options.grid < 1) throw Error(ErrorCode::metric, "frontier grid must have at least one step");
    const std::size_t g = options.grid;
    std::vector<std::pair<double, double>> curve;
    curve.emplace_back(0.0, 1.0);
    std::vector<double> r(p.size());
    for (std::size_t s = 0; s <= g; ++s) {
        // lambda runs from 1 down to 0; the weights are formed from integers so
        // swapping p and q reproduces the same mixtures.
        const double a = static_cast<double>(g - s) / static_cast<double>(g);
        const double b = static_cast<double>(s) / static_cast<double>(g);
        for (std::size_t i = 0; i < p.size(); ++i) r[i] = a * p[i] + b * q[i];
        curve.emplace_back(std::exp(-options.scale * kl_nats(q, r)), std::exp(-options.scale * kl_nats(p, r)));
    }
    curve.emplace_back(1.0, 0.0);
    double area = 0.0;
    for (std::size_t k = 0; k + 1 < curve.size(); ++k)
        area += (curve[k + 1].first - curve[k].first) * 0.5 * (curve[k].second + curve[k + 1].second);
    return std::clamp(area, 0.0, 1.0);
}

double divergence_frontier(std::span<const FeatureVector> p_features, std::span<const FeatureVector> q_features,
                           std::size_t n_bins, const FrontierOptions& options) {
    if (p_features.empty() || q_features.empty()) throw Error(ErrorCode::metric, "frontier needs two non-empty sets");
    if (n_bins == 0 || n_bins > std::min(p_features.size(), q_features.size()))
        throw Error(ErrorCode::metric, "n_bins must lie in [1, min set size]");

    std::set<std::vector<double>> distinct;
    for (auto set : {p_features, q_features})
        for (const auto& f : set) distinct.emplace(f.values().begin(), f.values().end());
    if (distinct.size() < n_bins)
        throw Error(ErrorCode::metric, "degenerate codebook: " + std::to_string(distinct.size()) +
                                           " distinct vectors for " + std::to_string(n_bins) + " bins");
    std::vector<LabeledPoint> points;
    points.reserve(distinct.size());
    for (const auto& v : distinct) points.push_back({std::to_string(points.size()), FeatureVector(v)});
    ClusterModel codebook = incremental_kmeans(points, {}, n_bins, options.seed);

    auto histogram = [&](std::span<const FeatureVector> set) {
        std::vector<double> h(n_bins, 0.0);
        for (const auto& f : set) h[assign_cluster(codebook, f)] += 1.0;
        for (auto& v : h) v /= static_cast<double>(set.size());
        return h;
    };
    auto hp = histogram(p_features);
    auto hq = histogram(q_features);
    if (hp == hq) return 1.0;
    return frontier_area(hp, hq, options);
}

}  // namespace hat
