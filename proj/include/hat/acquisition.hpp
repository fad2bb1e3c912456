#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hat/core.hpp"
#include "hat/geometry.hpp"
#include "hat/parser.hpp"
#include "hat/textmodel.hpp"

namespace hat {

enum class Variant { n_best, max };

enum class Strategy { abe_nbest, abe_max, random, cluster, lcs_fw, lcs_bw, traffic, csse, rttl };

std::string_view to_string(Strategy strategy);
/// Accepts the CLI names (abe-nbest, lcs-fw, ...); throws configuration error otherwise.
Strategy strategy_from_string(std::string_view name);
const std::vector<Strategy>& all_strategies();

struct AcquisitionConfig {
    Variant variant = Variant::n_best;
    std::size_t n = 10;
    double alpha_bias = 1.0;
    double alpha_error = 1.0;
    double alpha_density = 1.0;
    std::size_t beam_width = 32;
    std::size_t max_len = 32;
    double k_mult = 1.0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    /// Throws configuration error on n = 0, negative alphas, all alphas zero,
    /// beam_width < n or k_mult < 1.
    void validate() const;
};

/// Target utterance -> source utterance.
using BackTranslateFn = std::function<Utterance(const Utterance&)>;

/// Everything a strategy may read. Pointers left null mark models a caller
/// did not build; strategies that need them fail with a configuration error.
struct AcquisitionModels {
    const SurrogateParser* parser = nullptr;
    const ConditionalTranslationModel* translation = nullptr;
    BackTranslateFn back_translate;
    const KdeModel* kde = nullptr;
    const ClusterModel* clusters = nullptr;
    const std::map<int, NGramLM>* source_lms = nullptr;

    /// Distinct target sentences per LF in the current training data.
    std::map<int, std::vector<TokenSeq>> translations_by_lf;
    /// hash_embed features of pool utterances; missing ids are embedded on demand.
    std::unordered_map<std::string, FeatureVector> features;
    /// Source id -> its machine translation (RTTL).
    std::unordered_map<std::string, Utterance> mt_of_source;
    /// LF template id -> count in D_s (Traffic).
    std::unordered_map<int, std::size_t> lf_frequency;
    std::size_t round = 0;
};

/// Sum p log p of the renormalized distribution, i.e. negative entropy in nats.
double negative_entropy(std::span<const double> weights);

/// n_best: negative entropy of the renormalized N-best of the source's model.
/// max: log-probability of the beam argmax.
double score_translation_bias(const ConditionalTranslationModel& model, const std::string& source_id,
                              const AcquisitionConfig& config);

/// -sum_i w_i * log_posteriors[i] with w renormalized.
double expected_negative_loglik(std::span<const double> weights, std::span<const double> log_posteriors);

double score_translation_error(const SurrogateParser& parser, const BackTranslateFn& back_translate,
                               const ConditionalTranslationModel& model, std::span<const TokenSeq> same_lf_translations,
                               const Example& source, const AcquisitionConfig& config);

double score_semantic_density(const KdeModel& kde, const FeatureVector& features);

/// (rank - 0.5)/n over finite entries with tie-averaged ranks; -inf stays -inf.
/// Throws normalization error if no entry is finite or any is NaN/+inf.
std::vector<double> quantile_normalize(std::span<const double> scores);
ScoreMap quantile_normalize(const ScoreMap& scores);

/// Greedy pass over `candidates` in the given (descending partial aggregate)
/// order. Returns phi_d aligned with `candidates`.
std::vector<double> apply_diversity_mask(const ClusterModel& clusters, std::span<const std::string> candidates);

struct AcquisitionScores {
    std::vector<std::string> ids;  // pool order
    std::vector<double> bias, error, density;  // empty when the strategy has no such term
    std::vector<double> diversity;             // empty when no mask applies
    std::vector<double> aggregate;
};

struct TermScores {
    std::vector<std::string> ids;
    std::vector<double> bias, error, density;
};

/// Raw bias, error and density over the pool. Equal model keys share one
/// computation; keys are processed across `config.workers` threads.
TermScores compute_terms(std::span<const Example> pool, const AcquisitionModels& models,
                         const AcquisitionConfig& config);

/// phi_A = alpha_b qn(bias) + alpha_e qn(error) + alpha_s qn(density) + phi_d.
AcquisitionScores aggregate_abe(const TermScores& terms, const ClusterModel& clusters, const AcquisitionConfig& config);

/// Scores aligned with the pool for the non-ABE strategies.
AcquisitionScores score_baseline(Strategy strategy, std::span<const Example> pool, const AcquisitionModels& models,
                                 const AcquisitionConfig& config);

/// Any strategy, ABE included.
AcquisitionScores score_pool(Strategy strategy, std::span<const Example> pool, const AcquisitionModels& models,
                             const AcquisitionConfig& config);

/// Sentence BLEU with add-1 smoothing on orders >= 2. The highest order is
/// min(4, |candidate| - 1), at least 1, so every order has two or more
/// candidate n-grams. Throws metric error on empty input.
double sentence_bleu(std::span<const std::string> candidate, std::span<const std::string> reference);

/// id,phi_b,phi_e,phi_s,phi_d,phi_A,selected. Absent terms are left blank.
std::string scores_to_csv(const AcquisitionScores& scores, const std::set<std::string>& selected);

}  // namespace hat
