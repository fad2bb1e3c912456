#include "hat/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "hat/error.hpp"
#include "hat/parallel.hpp"
#include "hat/random.hpp"

namespace hat {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct NamedStrategy {
    Strategy strategy;
    std::string_view name;
};

constexpr NamedStrategy kStrategies[] = {
    {Strategy::abe_nbest, "abe-nbest"}, {Strategy::abe_max, "abe-max"}, {Strategy::random, "random"},
    {Strategy::cluster, "cluster"},     {Strategy::lcs_fw, "lcs-fw"},   {Strategy::lcs_bw, "lcs-bw"},
    {Strategy::traffic, "traffic"},     {Strategy::csse, "csse"},       {Strategy::rttl, "rttl"},
};

Utterance target_utterance(const TokenSeq& tokens) {
    Utterance u;
    u.language = std::string(kTargetLanguage);
    u.raw = join_tokens(tokens);
    u.tokens = tokens;
    return u;
}

const FeatureVector& features_of(const AcquisitionModels& models, const Example& e,
                                 std::unordered_map<std::string, FeatureVector>& scratch) {
    if (auto it = models.features.find(e.utterance.id); it != models.features.end()) return it->second;
    auto [it, _] = scratch.emplace(e.utterance.id, hash_embed(e.utterance.tokens));
    return it->second;
}

template <typename T>
const T& require(const T* p, Strategy s, std::string_view what) {
    if (!p)
        throw Error(ErrorCode::configuration,
                    fmt::format("strategy '{}' needs {} but none was provided", to_string(s), what));
    return *p;
}

// Indices sorted by descending score; ties keep pool order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

// Mask in descending `partial` order, then add it to `partial`.
void mask_and_add(const ClusterModel& clusters, AcquisitionScores& out, std::span<const double> partial) {
    auto order = descending_order(partial);
    std::vector<std::string> ranked;
    ranked.reserve(order.size());
    for (auto i : order) ranked.push_back(out.ids[i]);
    auto mask = apply_diversity_mask(clusters, ranked);
    out.diversity.assign(partial.size(), 0.0);
    for (std::size_t r = 0; r < order.size(); ++r) out.diversity[order[r]] = mask[r];
    out.aggregate.resize(partial.size());
    for (std::size_t i = 0; i < partial.size(); ++i) out.aggregate[i] = partial[i] + out.diversity[i];
}

std::vector<double> seeded_uniforms(std::uint64_t seed, std::uint64_t stream, std::size_t n) {
    Rng rng = derive_rng(seed, stream);
    std::vector<double> u(n);
    for (auto& v : u) v = uniform01(rng);
    return u;
}

}  // namespace

std::string_view to_string(Strategy strategy) {
    for (const auto& s : kStrategies)
        if (s.strategy == strategy) return s.name;
    return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
    for (const auto& s : kStrategies)
        if (s.name == name) return s.strategy;
    throw Error(ErrorCode::configuration, fmt::format("unknown acquisition '{}'", name));
}

const std::vector<Strategy>& all_strategies() {
    static const std::vector<Strategy> all = [] {
        std::vector<Strategy> v;
        for (const auto& s : kStrategies) v.push_back(s.strategy);
        return v;
    }();
    return all;
}

void AcquisitionConfig::validate() const {
    if (n == 0) throw Error(ErrorCode::configuration, "N-best size must be at least 1");
    if (beam_width < n) throw Error(ErrorCode::configuration, "beam_width must be at least n");
    if (max_len == 0) throw Error(ErrorCode::configuration, "max_len must be positive");
    for (double a : {alpha_bias, alpha_error, alpha_density})
        if (!(a >= 0.0) || !std::isfinite(a)) throw Error(ErrorCode::configuration, "alpha must be finite and >= 0");
    if (alpha_bias + alpha_error + alpha_density <= 0.0)
        throw Error(ErrorCode::configuration, "at least one alpha must be positive");
    if (!(k_mult >= 1.0)) throw Error(ErrorCode::configuration, "k_mult must be at least 1");
}

double negative_entropy(std::span<const double> weights) {
    double z = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw Error(ErrorCode::invalid_argument, "weights must be non-negative");
        z += w;
    }
    if (!(z > 0.0)) throw Error(ErrorCode::invalid_argument, "weights sum to zero");
    double s = 0.0;
    for (double w : weights)
        if (w > 0.0) {
            double p = w / z;
            s += p * std::log(p);
        }
    return std::min(0.0, s);
}

double score_translation_bias(const ConditionalTranslationModel& model, const std::string& source_id,
                              const AcquisitionConfig& config) {
    const NGramLM& lm = model.model_for_source(source_id);
    if (config.variant == Variant::max) {
        auto best = beam_nbest(lm, config.beam_width, 1, config.max_len);
        return best.front().logprob;
    }
    auto hyps = beam_nbest(lm, config.beam_width, config.n, config.max_len);
    if (hyps.empty()) throw Error(ErrorCode::decode, "empty N-best list");
    auto p = renormalize_nbest(hyps);
    return negative_entropy(p);
}

double expected_negative_loglik(std::span<const double> weights, std::span<const double> log_posteriors) {
    if (weights.size() != log_posteriors.size() || weights.empty())
        throw Error(ErrorCode::invalid_argument, "weights and posteriors must be non-empty and aligned");
    double z = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(z > 0.0)) throw Error(ErrorCode::invalid_argument, "weights sum to zero");
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s -= (weights[i] / z) * log_posteriors[i];
    return std::max(0.0, s);
}

double score_translation_error(const SurrogateParser& parser, const BackTranslateFn& back_translate,
                               const ConditionalTranslationModel& model, std::span<const TokenSeq> same_lf_translations,
                               const Example& source, const AcquisitionConfig& config) {
    if (!back_translate) throw Error(ErrorCode::configuration, "no back-translation oracle");
    const NGramLM& lm = model.model_for_source(source.utterance.id);
    if (config.variant == Variant::max) {
        auto best = beam_nbest(lm, config.beam_width, 1, config.max_len);
        Utterance bt = back_translate(target_utterance(best.front().tokens));
        return std::max(0.0, -parser.loglik(bt.tokens, source.lf));
    }
    if (same_lf_translations.empty())
        throw Error(ErrorCode::configuration, "no translations for LF '" + source.lf.canonical + "'");
    std::vector<double> logw, logpost;
    for (const auto& t : same_lf_translations) {
        logw.push_back(lm.loglik(t));
        Utterance bt = back_translate(target_utterance(t));
        logpost.push_back(parser.loglik(bt.tokens, source.lf));
    }
    double mx = *std::max_element(logw.begin(), logw.end());
    std::vector<double> w;
    for (double v : logw) w.push_back(std::exp(v - mx));
    return expected_negative_loglik(w, logpost);
}

double score_semantic_density(const KdeModel& kde, const FeatureVector& features) { return kde.log_density(features); }

std::vector<double> quantile_normalize(std::span<const double> scores) {
    std::vector<std::size_t> finite;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        double v = scores[i];
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw Error(ErrorCode::normalization, "scores must be finite or -inf");
        if (v != kNegInf) finite.push_back(i);
    }
    if (finite.empty()) throw Error(ErrorCode::normalization, "no finite score to normalize");
    std::stable_sort(finite.begin(), finite.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> out(scores.size(), kNegInf);
    const double n = static_cast<double>(finite.size());
    for (std::size_t lo = 0; lo < finite.size();) {
        std::size_t hi = lo;
        while (hi + 1 < finite.size() && scores[finite[hi + 1]] == scores[finite[lo]]) ++hi;
        // Ranks lo+1..hi+1 share their mean.
        double rank = 0.5 * static_cast<double>(lo + hi) + 1.0;
        for (std::size_t r = lo; r <= hi; ++r) out[finite[r]] = (rank - 0.5) / n;
        lo = hi + 1;
    }
    return out;
}

ScoreMap quantile_normalize(const ScoreMap& scores) {
    std::vector<std::string> ids;
    std::vector<double> values;
    for (const auto& [id, v] : scores) {
        ids.push_back(id);
        values.push_back(v);
    }
    auto q = quantile_normalize(values);
    ScoreMap out;
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = q[i];
    return out;
}

std::vector<double> apply_diversity_mask(const ClusterModel& clusters, std::span<const std::string> candidates) {
    std::vector<bool> used(clusters.num_clusters(), false);
    for (std::size_t c = 0; c < clusters.fixed_centers.size(); ++c) used[c] = true;
    std::vector<double> mask(candidates.size(), kNegInf);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto it = clusters.assignment.find(candidates[i]);
        if (it == clusters.assignment.end())
            throw Error(ErrorCode::clustering, "candidate '" + candidates[i] + "' has no cluster");
        if (used.at(it->second)) continue;
        used[it->second] = true;
        mask[i] = 0.0;
    }
    return mask;
}

TermScores compute_terms(std::span<const Example> pool, const AcquisitionModels& models,
                         const AcquisitionConfig& config) {
    config.validate();
    const Strategy who = config.variant == Variant::n_best ? Strategy::abe_nbest : Strategy::abe_max;
    const auto& translation = require(models.translation, who, "a distilled translation model");
    const auto& parser = require(models.parser, who, "a parser");
    const auto& kde = require(models.kde, who, "a density model");

    TermScores t;
    t.ids.reserve(pool.size());
    for (const auto& e : pool) t.ids.push_back(e.utterance.id);

    // One bias/error computation per distinct model key.
    std::vector<std::string> keys;
    std::vector<std::size_t> representative;
    std::vector<std::size_t> key_of(pool.size());
    std::unordered_map<std::string, std::size_t> key_index;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::string k = translation.model_key(pool[i].utterance.id);
        auto [it, fresh] = key_index.emplace(k, keys.size());
        if (fresh) {
            keys.push_back(k);
            representative.push_back(i);
        }
        key_of[i] = it->second;
    }
    std::vector<double> bias(keys.size()), error(keys.size());
    static const std::vector<TokenSeq> kNone;
    parallel_for(keys.size(), config.workers, [&](std::size_t k) {
        const Example& e = pool[representative[k]];
        bias[k] = score_translation_bias(translation, e.utterance.id, config);
        auto it = models.translations_by_lf.find(e.lf.template_id);
        const auto& same = it == models.translations_by_lf.end() ? kNone : it->second;
        error[k] = score_translation_error(parser, models.back_translate, translation, same, e, config);
    });

    std::vector<const FeatureVector*> feats(pool.size(), nullptr);
    std::vector<FeatureVector> embedded(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        auto it = models.features.find(pool[i].utterance.id);
        if (it != models.features.end()) {
            feats[i] = &it->second;
        } else {
            embedded[i] = hash_embed(pool[i].utterance.tokens);
            feats[i] = &embedded[i];
        }
    }
    t.density.resize(pool.size());
    parallel_for(pool.size(), config.workers,
                 [&](std::size_t i) { t.density[i] = score_semantic_density(kde, *feats[i]); });

    t.bias.resize(pool.size());
    t.error.resize(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        t.bias[i] = bias[key_of[i]];
        t.error[i] = error[key_of[i]];
    }
    return t;
}

AcquisitionScores aggregate_abe(const TermScores& terms, const ClusterModel& clusters,
                                const AcquisitionConfig& config) {
    config.validate();
    const std::size_t n = terms.ids.size();
    if (terms.bias.size() != n || terms.error.size() != n || terms.density.size() != n)
        throw Error(ErrorCode::invalid_argument, "term vectors are not aligned with the pool");
    AcquisitionScores out;
    out.ids = terms.ids;
    out.bias = terms.bias;
    out.error = terms.error;
    out.density = terms.density;
    if (n == 0) return out;

    std::vector<double> partial(n, 0.0);
    auto add = [&](double alpha, const std::vector<double>& raw) {
        if (alpha == 0.0) return;
        auto q = quantile_normalize(raw);
        for (std::size_t i = 0; i < n; ++i) partial[i] += alpha * q[i];
    };
    add(config.alpha_bias, terms.bias);
    add(config.alpha_error, terms.error);
    add(config.alpha_density, terms.density);
    mask_and_add(clusters, out, partial);
    return out;
}

AcquisitionScores score_baseline(Strategy strategy, std::span<const Example> pool, const AcquisitionModels& models,
                                 const AcquisitionConfig& config) {
    AcquisitionScores out;
    for (const auto& e : pool) out.ids.push_back(e.utterance.id);
    const std::size_t n = pool.size();
    auto& agg = out.aggregate;
    agg.resize(n);

    switch (strategy) {
        case Strategy::abe_nbest:
        case Strategy::abe_max:
            throw Error(ErrorCode::configuration, "ABE is not a baseline; use score_pool");
        case Strategy::random: {
            agg = seeded_uniforms(config.seed, 0x52414e44000000ull + models.round, n);
            break;
        }
        case Strategy::cluster: {
            const auto& clusters = require(models.clusters, strategy, "a cluster model");
            auto r = seeded_uniforms(config.seed, 0x434c5553000000ull + models.round, n);
            mask_and_add(clusters, out, r);
            break;
        }
        case Strategy::lcs_fw: {
            const auto& parser = require(models.parser, strategy, "a parser");
            parallel_for(n, config.workers,
                         [&](std::size_t i) { agg[i] = -parser.loglik(pool[i].utterance.tokens, pool[i].lf); });
            break;
        }
        case Strategy::lcs_bw: {
            const auto& lms = require(models.source_lms, strategy, "per-LF source language models");
            for (std::size_t i = 0; i < n; ++i) {
                auto it = lms.find(pool[i].lf.template_id);
                if (it == lms.end())
                    throw Error(ErrorCode::configuration,
                                "strategy 'lcs-bw' has no source model for LF '" + pool[i].lf.canonical + "'");
                agg[i] = -it->second.loglik(pool[i].utterance.tokens);
            }
            break;
        }
        case Strategy::traffic: {
            const auto& parser = require(models.parser, strategy, "a parser");
            std::vector<double> neg_ppl(n), freq(n);
            for (std::size_t i = 0; i < n; ++i) {
                neg_ppl[i] = -parser.perplexity(pool[i].utterance.tokens, pool[i].lf);
                auto it = models.lf_frequency.find(pool[i].lf.template_id);
                freq[i] = it == models.lf_frequency.end() ? 0.0 : static_cast<double>(it->second);
            }
            auto a = quantile_normalize(neg_ppl);
            auto b = quantile_normalize(freq);
            for (std::size_t i = 0; i < n; ++i) agg[i] = a[i] + b[i];
            break;
        }
        case Strategy::csse: {
            const auto& kde = require(models.kde, strategy, "a density model");
            const auto& clusters = require(models.clusters, strategy, "a cluster model");
            std::unordered_map<std::string, FeatureVector> scratch;
            out.density.resize(n);
            std::vector<double> partial(n);
            for (std::size_t i = 0; i < n; ++i) {
                out.density[i] = score_semantic_density(kde, features_of(models, pool[i], scratch));
                partial[i] = config.alpha_density * out.density[i];
            }
            mask_and_add(clusters, out, partial);
            break;
        }
        case Strategy::rttl: {
            if (!models.back_translate)
                throw Error(ErrorCode::configuration, "strategy 'rttl' needs a back-translation oracle");
            for (std::size_t i = 0; i < n; ++i) {
                auto it = models.mt_of_source.find(pool[i].utterance.id);
                if (it == models.mt_of_source.end())
                    throw Error(ErrorCode::configuration,
                                "strategy 'rttl' has no machine translation for '" + pool[i].utterance.id + "'");
                Utterance bt = models.back_translate(it->second);
                agg[i] = 1.0 - sentence_bleu(bt.tokens, pool[i].utterance.tokens);
            }
            break;
        }
    }
    return out;
}

AcquisitionScores score_pool(Strategy strategy, std::span<const Example> pool, const AcquisitionModels& models,
                             const AcquisitionConfig& config) {
    if (strategy == Strategy::abe_nbest || strategy == Strategy::abe_max) {
        AcquisitionConfig c = config;
        c.variant = strategy == Strategy::abe_nbest ? Variant::n_best : Variant::max;
        auto terms = compute_terms(pool, models, c);
        return aggregate_abe(terms, require(models.clusters, strategy, "a cluster model"), c);
    }
    return score_baseline(strategy, pool, models, config);
}

double sentence_bleu(std::span<const std::string> candidate, std::span<const std::string> reference) {
    if (candidate.empty() || reference.empty()) throw Error(ErrorCode::metric, "BLEU needs non-empty inputs");
    const std::size_t max_order = std::max<std::size_t>(1, std::min<std::size_t>(4, candidate.size() - 1));
    double log_sum = 0.0;
    for (std::size_t order = 1; order <= max_order; ++order) {
        std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
        for (std::size_t i = 0; i + order <= reference.size(); ++i)
            ++ref_counts[{reference.begin() + i, reference.begin() + i + order}];
        std::size_t total = 0;
        for (std::size_t i = 0; i + order <= candidate.size(); ++i, ++total)
            ++cand_counts[{candidate.begin() + i, candidate.begin() + i + order}];
        std::size_t matches = 0;
        for (const auto& [gram, c] : cand_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matches += std::min(c, it->second);
        }
        double p = order == 1 ? static_cast<double>(matches) / static_cast<double>(total)
                              : static_cast<double>(matches + 1) / static_cast<double>(total + 1);
        if (p == 0.0) return 0.0;
        log_sum += std::log(p);
    }
    double bp = candidate.size() < reference.size()
                    ? std::exp(1.0 - static_cast<double>(reference.size()) / static_cast<double>(candidate.size()))
                    : 1.0;
    return std::clamp(bp * std::exp(log_sum / static_cast<double>(max_order)), 0.0, 1.0);
}

std::string scores_to_csv(const AcquisitionScores& s, const std::set<std::string>& selected) {
    auto cell = [](const std::vector<double>& v, std::size_t i) { return v.empty() ? std::string() : fmt::format("{}", v[i]); };
    std::string out = "id,phi_b,phi_e,phi_s,phi_d,phi_A,selected\n";
    for (std::size_t i = 0; i < s.ids.size(); ++i)
        out += fmt::format("{},{},{},{},{},{},{}\n", s.ids[i], cell(s.bias, i), cell(s.error, i), cell(s.density, i),
                           cell(s.diversity, i), s.aggregate[i], selected.count(s.ids[i]) ? 1 : 0);
    return out;
}

}  // namespace hat
