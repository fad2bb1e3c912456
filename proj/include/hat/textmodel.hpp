#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hat/core.hpp"
#include "hat/io.hpp"

namespace hat {

struct NGramConfig {
    double add_k = 0.1;
    double interpolation = 0.7;  // weight of the bigram term; 0 gives a unigram model
};

/// Interpolated bigram/unigram model with add-k smoothing.
///
/// The event space for every history is vocab + UNK + EOS. Unigram counts
/// cover tokens only (EOS never appears there); bigram counts include
/// BOS -> first token and last token -> EOS. For a history h:
///
///     P(w | h) = l * (c(h,w) + k) / (c(h) + k|E|) + (1 - l) * (c(w) + k) / (T + k|E|)
///
/// which sums to one over E and is strictly positive.
class NGramLM {
public:
    using Id = std::uint32_t;

    static NGramLM train(std::span<const TokenSeq> corpus, const NGramConfig& config = {},
                         const std::vector<std::string>* vocab = nullptr);

    std::size_t vocab_size() const { return vocab_.size(); }
    const std::vector<std::string>& vocab() const { return vocab_; }
    Id unk() const { return static_cast<Id>(vocab_.size()); }
    Id eos() const { return unk() + 1; }
    Id bos() const { return unk() + 2; }
    std::size_t event_count() const { return vocab_.size() + 2; }

    Id id_of(const std::string& token) const;
    const std::string& token_of(Id id) const;

    double prob(Id next, Id history) const;
    double log_prob(Id next, Id history) const;

    /// sum_t log P(tok_t | tok_{t-1}) + log P(EOS | last), natural log.
    double loglik(std::span<const std::string> tokens) const;
    double loglik_ids(std::span<const Id> ids) const;

    const NGramConfig& config() const { return config_; }
    std::uint64_t unigram_count(Id id) const { return unigram_[id]; }
    std::uint64_t bigram_count(Id history, Id next) const;
    std::uint64_t total_tokens() const { return total_tokens_; }

    /// Count tables for debugging dumps.
    json to_json() const;

private:
    static std::uint64_t key(Id h, Id w) { return (static_cast<std::uint64_t>(h) << 32) | w; }

    NGramConfig config_;
    std::vector<std::string> vocab_;  // sorted
    std::unordered_map<std::string, Id> index_;
    std::vector<std::uint64_t> unigram_;   // size vocab + 2 (UNK, EOS)
    std::vector<std::uint64_t> history_;   // size vocab + 3 (UNK, EOS, BOS)
    std::unordered_map<std::uint64_t, std::uint64_t> bigram_;
    std::uint64_t total_tokens_ = 0;
};

struct BeamHypothesis {
    TokenSeq tokens;
    double logprob = 0.0;

    bool operator==(const BeamHypothesis&) const = default;
};

/// Up to n distinct complete hypotheses, logprob descending (ties by token
/// order). UNK is never emitted. When beam_width covers every reachable prefix
/// the result is the exact top-n. Throws decode error if nothing completes
/// within max_len tokens.
std::vector<BeamHypothesis> beam_nbest(const NGramLM& model, std::size_t beam_width, std::size_t n,
                                       std::size_t max_len);

/// Softmax of the hypothesis logprobs with max subtraction.
std::vector<double> renormalize_nbest(std::span<const BeamHypothesis> hyps);

inline constexpr std::size_t kDefaultFeatureDimension = 256;

/// 64-bit FNV-1a; the hash behind hash_embed.
std::uint64_t fnv1a64(std::string_view bytes);

/// Bag-of-character-trigrams embedding. Each token is wrapped as "#tok#";
/// each byte trigram t contributes sign(t) at index fnv1a64(t) % d where the
/// sign is + when the top hash bit is clear. Token vectors are averaged over
/// their trigrams, the sequence vector is the average over tokens, and the
/// result is L2-normalized. Throws invalid-argument on empty input or a zero vector.
FeatureVector hash_embed(std::span<const std::string> tokens, std::size_t dimension = kDefaultFeatureDimension);

enum class Factorization {
    by_lf,       // P(x_t | x_s) = P(x_t | y(x_s)): one model per LF
    per_source,  // one model per source utterance over its own translations
};

struct TranslationPair {
    Example source;
    Example target;
};

struct DistillConfig {
    NGramConfig lm;
    Factorization factorization = Factorization::by_lf;
};

/// Distilled estimate of the empirical translation distribution of the
/// current training data.
class ConditionalTranslationModel {
public:
    bool covers(const std::string& source_id) const;
    const NGramLM& model_for_source(const std::string& source_id) const;
    const NGramLM& model_for_lf(int template_id) const;

    int lf_of_source(const std::string& source_id) const;
    Factorization factorization() const { return factorization_; }
    const std::map<int, NGramLM>& per_lf() const { return per_lf_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    /// Key identifying the model a source utterance is scored with; equal keys
    /// mean equal scores.
    std::string model_key(const std::string& source_id) const;

    json to_json() const;

private:
    friend ConditionalTranslationModel distill_translation_model(std::span<const TranslationPair>,
                                                                 std::span<const Example>, const DistillConfig&);

    Factorization factorization_ = Factorization::by_lf;
    std::map<int, NGramLM> per_lf_;
    std::map<std::string, NGramLM> per_source_;
    std::unordered_map<std::string, int> lf_of_source_;
    std::vector<std::string> warnings_;
};

/// Rebuilt from scratch each round. `source_pool` makes lf_of_source total;
/// LFs of the pool without any pair are excluded and reported in warnings().
ConditionalTranslationModel distill_translation_model(std::span<const TranslationPair> pairs,
                                                      std::span<const Example> source_pool,
                                                      const DistillConfig& config = {});

/// Pairs (source, target) for D_mt via alignment plus every D_ht entry.
std::vector<TranslationPair> training_pairs(const DatasetBundle& bundle);

}  // namespace hat
