#include "hat/core.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include "hat/error.hpp"

namespace hat {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::range: return "range";
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::selection_exhausted: return "selection-exhausted";
        case ErrorCode::integrity: return "integrity";
        case ErrorCode::training: return "training";
        case ErrorCode::decode: return "decode";
        case ErrorCode::parameter: return "parameter";
        case ErrorCode::clustering: return "clustering";
        case ErrorCode::unknown_class: return "unknown-class";
        case ErrorCode::normalization: return "normalization";
        case ErrorCode::metric: return "metric";
        case ErrorCode::measure: return "measure";
        case ErrorCode::configuration: return "configuration";
        case ErrorCode::evaluation: return "evaluation";
        case ErrorCode::validation: return "validation";
        case ErrorCode::not_found: return "not-found";
        case ErrorCode::conflict: return "conflict";
        case ErrorCode::state: return "state";
        case ErrorCode::completeness: return "completeness";
        case ErrorCode::suspended: return "suspended";
        case ErrorCode::io: return "io";
        case ErrorCode::internal: return "internal";
    }
    return "unknown";
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

Utterance make_utterance(std::string id, std::string language, std::string raw) {
    Utterance u{std::move(id), std::move(language), std::move(raw), {}};
    u.tokens = tokenize(u.raw);
    if (u.tokens.empty()) throw Error(ErrorCode::validation, "utterance '" + u.id + "' has no tokens");
    return u;
}

std::string_view to_string(Origin origin) {
    switch (origin) {
        case Origin::source: return "source";
        case Origin::machine_translated: return "machine_translated";
        case Origin::human_translated: return "human_translated";
    }
    return "source";
}

Origin origin_from_string(std::string_view text) {
    if (text == "source") return Origin::source;
    if (text == "machine_translated") return Origin::machine_translated;
    if (text == "human_translated") return Origin::human_translated;
    throw Error(ErrorCode::validation, "unknown origin '" + std::string(text) + "'");
}

const Example& DatasetBundle::source_by_id(const std::string& id) const {
    // Pools are small; a linear scan keeps the bundle a plain value type.
    for (const auto& e : d_source)
        if (e.utterance.id == id) return e;
    throw Error(ErrorCode::not_found, "source utterance '" + id + "'");
}

const Example& DatasetBundle::mt_for_source(const std::string& source_id) const {
    auto it = alignment.find(source_id);
    if (it == alignment.end()) throw Error(ErrorCode::not_found, "no MT alignment for '" + source_id + "'");
    for (const auto& e : d_mt)
        if (e.utterance.id == it->second) return e;
    throw Error(ErrorCode::not_found, "MT utterance '" + it->second + "'");
}

void DatasetBundle::validate() const {
    if (d_source.size() != d_mt.size())
        throw Error(ErrorCode::integrity, "d_mt: size differs from d_source");
    auto check_unique = [](const std::vector<Example>& set, const char* name) {
        std::unordered_set<std::string> seen;
        for (const auto& e : set) {
            if (e.utterance.tokens.empty())
                throw Error(ErrorCode::integrity, std::string(name) + ": empty tokens for '" + e.utterance.id + "'");
            if (!seen.insert(e.utterance.id).second)
                throw Error(ErrorCode::integrity, std::string(name) + ": duplicate id '" + e.utterance.id + "'");
        }
        return seen;
    };
    auto source_ids = check_unique(d_source, "d_source");
    auto mt_ids = check_unique(d_mt, "d_mt");
    check_unique(d_ht, "d_ht");
    check_unique(test_source, "test_source");
    check_unique(test_target, "test_target");
    if (alignment.size() != d_source.size())
        throw Error(ErrorCode::integrity, "alignment: size differs from d_source");
    for (const auto& [src, mt] : alignment) {
        if (!source_ids.count(src)) throw Error(ErrorCode::integrity, "alignment: unknown source id '" + src + "'");
        if (!mt_ids.count(mt)) throw Error(ErrorCode::integrity, "alignment: unknown MT id '" + mt + "'");
    }
    for (const auto& e : d_ht) {
        if (!source_ids.count(e.utterance.id))
            throw Error(ErrorCode::integrity, "d_ht: '" + e.utterance.id + "' is not a source id");
        if (e.origin != Origin::human_translated)
            throw Error(ErrorCode::integrity, "d_ht: '" + e.utterance.id + "' origin is not human_translated");
    }
    for (const auto& e : d_mt)
        if (e.origin != Origin::machine_translated)
            throw Error(ErrorCode::integrity, "d_mt: '" + e.utterance.id + "' origin is not machine_translated");
}

void assign_template_ids(DatasetBundle& bundle) {
    std::set<std::string> canon;
    auto collect = [&](const std::vector<Example>& set) {
        for (const auto& e : set) canon.insert(e.lf.canonical);
    };
    collect(bundle.d_source);
    collect(bundle.d_mt);
    collect(bundle.d_ht);
    collect(bundle.test_source);
    collect(bundle.test_target);
    std::unordered_map<std::string, int> ids;
    int next = 0;
    for (const auto& c : canon) ids.emplace(c, next++);
    auto apply = [&](std::vector<Example>& set) {
        for (auto& e : set) e.lf.template_id = ids.at(e.lf.canonical);
    };
    apply(bundle.d_source);
    apply(bundle.d_mt);
    apply(bundle.d_ht);
    apply(bundle.test_source);
    apply(bundle.test_target);
}

RoundBudget budget_for_round(const BudgetSchedule& schedule, std::size_t round) {
    if (round < 1 || round > schedule.rounds())
        throw Error(ErrorCode::range, "round " + std::to_string(round) + " outside [1, " +
                                          std::to_string(schedule.rounds()) + "]");
    std::size_t previous = 0;
    double previous_fraction = 0.0;
    RoundBudget out;
    for (std::size_t q = 1; q <= round; ++q) {
        double f = schedule.cumulative_fractions[q - 1];
        if (!(f > previous_fraction) || f > 1.0)
            throw Error(ErrorCode::parameter, "cumulative fractions must be strictly increasing within (0, 1]");
        auto cumulative = static_cast<std::size_t>(std::floor(static_cast<double>(schedule.pool_size) * f));
        cumulative = std::max<std::size_t>(1, cumulative);
        if (cumulative <= previous)
            throw Error(ErrorCode::parameter,
                        "round " + std::to_string(q) + " budget increment is zero for pool size " +
                            std::to_string(schedule.pool_size));
        out = {cumulative, cumulative - previous};
        previous = cumulative;
        previous_fraction = f;
    }
    return out;
}

std::vector<std::size_t> topk_select_indices(std::span<const double> scores, std::size_t k) {
    if (k > scores.size())
        throw Error(ErrorCode::selection_exhausted,
                    "budget " + std::to_string(k) + " exceeds pool of " + std::to_string(scores.size()));
    for (double s : scores)
        if (std::isnan(s) || s == std::numeric_limits<double>::infinity())
            throw Error(ErrorCode::invalid_argument, "scores must be finite or -inf");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(k);
    for (std::size_t i : order)
        if (std::isinf(scores[i]))
            throw Error(ErrorCode::selection_exhausted,
                        "fewer than " + std::to_string(k) + " candidates with finite scores");
    return order;
}

std::vector<std::string> topk_select(const ScoreMap& scores, std::size_t k, std::span<const std::string> pool) {
    std::vector<double> aligned;
    aligned.reserve(pool.size());
    for (const auto& id : pool) {
        auto it = scores.find(id);
        if (it == scores.end()) throw Error(ErrorCode::invalid_argument, "no score for pool id '" + id + "'");
        aligned.push_back(it->second);
    }
    std::vector<std::string> out;
    for (std::size_t i : topk_select_indices(aligned, k)) out.push_back(pool[i]);
    return out;
}

std::vector<Example> merge_training_set(const DatasetBundle& bundle) {
    std::vector<Example> out;
    out.reserve(bundle.d_source.size() + bundle.d_mt.size() + bundle.d_ht.size());
    out.insert(out.end(), bundle.d_source.begin(), bundle.d_source.end());
    if (bundle.alignment.empty()) {
        out.insert(out.end(), bundle.d_mt.begin(), bundle.d_mt.end());
    } else {
        std::unordered_map<std::string, const Example*> mt_by_id;
        for (const auto& e : bundle.d_mt) mt_by_id.emplace(e.utterance.id, &e);
        for (const auto& src : bundle.d_source) {
            auto a = bundle.alignment.find(src.utterance.id);
            if (a == bundle.alignment.end()) continue;
            auto m = mt_by_id.find(a->second);
            if (m != mt_by_id.end()) out.push_back(*m->second);
        }
    }
    out.insert(out.end(), bundle.d_ht.begin(), bundle.d_ht.end());
    return out;
}

FeatureVector::FeatureVector(std::vector<double> values) : values_(std::move(values)) {
    double s = 0.0;
    for (double v : values_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "feature vector entries must be finite");
        s += v * v;
    }
    norm_ = std::sqrt(s);
}

double squared_distance(const FeatureVector& a, const FeatureVector& b) {
    if (a.dimension() != b.dimension())
        throw Error(ErrorCode::invalid_argument, "feature dimension mismatch");
    auto x = a.values();
    auto y = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

double euclidean_distance(const FeatureVector& a, const FeatureVector& b) {
    return std::sqrt(squared_distance(a, b));
}

}  // namespace hat
