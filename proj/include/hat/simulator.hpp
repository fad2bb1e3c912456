#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hat/core.hpp"
#include "hat/io.hpp"
#include "hat/random.hpp"

namespace hat {

/// Knobs of the synthetic bilingual world.
struct WorldConfig {
    std::size_t n_lfs = 60;
    std::size_t paraphrases_per_lf_source = 2;
    std::size_t paraphrases_per_lf_target = 8;
    double bias = 0.95;   // beta: 1 collapses MT onto a single phrasing per LF
    double error = 0.15;  // epsilon: chance an MT output realizes another LF
    double bt_error = 0.0;  // chance a back-translation realizes another LF
    double ht_temperature = 1.0;
    std::size_t mt_preferred = 1;  // bank item the MT favours
    std::size_t pool_size = 600;
    std::size_t test_size = 600;
    std::size_t source_frames = 12;
    std::size_t target_frames = 16;
    std::uint64_t seed = 0;

    /// Throws configuration error on out-of-range or infeasible values.
    void validate() const;
};

json world_config_to_json(const WorldConfig& config);
/// Missing keys keep their defaults; unknown keys are a configuration error.
WorldConfig world_config_from_json(const json& j);
WorldConfig load_world_config(const std::filesystem::path& path);

/// Ground-truth tables and the MT/HT/BT oracles of one world. LF index k is
/// the template id assigned by assign_template_ids. Target sentences form a
/// global bank indexed lf * m + item.
class Oracles {
public:
    const WorldConfig& config() const { return config_; }
    std::size_t num_lfs() const { return lfs_.size(); }
    std::size_t bank_size() const { return bank_.size(); }
    const LogicalForm& lf(std::size_t index) const { return lfs_.at(index); }
    const TokenSeq& bank_sentence(std::size_t global_index) const { return bank_.at(global_index); }

    /// Exact distributions over the global bank.
    const std::vector<double>& p_ht(std::size_t lf_index) const { return p_ht_.at(lf_index); }
    const std::vector<double>& p_mt(std::size_t lf_index) const { return p_mt_.at(lf_index); }

    /// Deterministic per source id: same input, same translation.
    Utterance mt(const Utterance& source) const;
    /// Draws a target sentence for LF `lf_index` from the human distribution.
    Utterance ht(std::size_t lf_index, Rng& rng) const;
    /// Inverse-lexicon back-translation; unknown target tokens become "unk".
    Utterance bt(const Utterance& target) const;

    /// Index of a world LF by canonical string; throws unknown-class otherwise.
    std::size_t lf_index(const LogicalForm& lf) const;

    /// LF realized by a source utterance (entity word lookup), or -1.
    int realized_source_lf(std::span<const std::string> tokens) const;
    /// LF realized by a target sentence (keyword lookup), or -1.
    int realized_target_lf(std::span<const std::string> tokens) const;

private:
    friend struct WorldBuilder;

    WorldConfig config_;
    std::vector<LogicalForm> lfs_;
    std::vector<TokenSeq> source_bank_;        // lf * p_s + paraphrase
    std::vector<TokenSeq> bank_;               // lf * m + item
    std::vector<double> mt_conditional_;       // over items of one LF
    std::vector<double> ht_conditional_;       // over items of one LF
    std::vector<std::vector<double>> p_ht_, p_mt_;
    std::unordered_map<std::string, std::size_t> source_entity_;  // entity word -> lf
    std::unordered_map<std::string, std::size_t> target_keyword_; // keyword -> global bank index
    std::unordered_map<std::string, std::string> frame_lexicon_;  // target frame token -> source token
    std::unordered_map<std::string, std::size_t> lf_by_canonical_;
    std::vector<std::string> pred_word_, entity_word_;
};

struct World {
    DatasetBundle bundle;
    Oracles oracles;
};

World generate_world(const WorldConfig& config);

/// Simulated human translation of `source`, origin human_translated, id equal to the source id.
Example simulated_ht(const Oracles& oracles, const Example& source, Rng& rng);

inline Utterance back_translate(const Oracles& oracles, const Utterance& target) { return oracles.bt(target); }

/// -sum p log p of lambda * p_ht + (1 - lambda) * p_mt, natural log.
double mixture_entropy(std::span<const double> p_ht, std::span<const double> p_mt, double lambda);

/// KL(lambda * p_ht + (1 - lambda) * p_mt || p_ht). Throws measure error when
/// the mixture puts mass where p_ht has none.
double mixture_kl(std::span<const double> p_ht, std::span<const double> p_mt, double lambda);

double true_conditional_entropy(const Oracles& oracles, std::size_t lf_index, double lambda);
double kl_to_component(const Oracles& oracles, std::size_t lf_index, double lambda);

}  // namespace hat
