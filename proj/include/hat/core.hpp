#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hat/tokenize.hpp"

namespace hat {

inline constexpr std::string_view kSourceLanguage = "src";
inline constexpr std::string_view kTargetLanguage = "tgt";

struct Utterance {
    std::string id;
    std::string language;
    std::string raw;
    TokenSeq tokens;

    bool operator==(const Utterance&) const = default;
};

/// Builds an utterance with tokens derived from `raw` by `tokenize`.
/// Throws validation error when the text has no tokens.
Utterance make_utterance(std::string id, std::string language, std::string raw);

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

struct LogicalForm {
    std::string canonical;
    int template_id = -1;

    LogicalForm() = default;
    LogicalForm(std::string text, int id) : canonical(normalize_whitespace(text)), template_id(id) {}

    // Exact-match criterion: canonical strings only.
    bool operator==(const LogicalForm& other) const { return canonical == other.canonical; }
};

enum class Origin { source, machine_translated, human_translated };

std::string_view to_string(Origin origin);
Origin origin_from_string(std::string_view text);

struct Example {
    Utterance utterance;
    LogicalForm lf;
    Origin origin = Origin::source;

    bool operator==(const Example& other) const {
        return utterance == other.utterance && lf == other.lf && lf.template_id == other.lf.template_id &&
               origin == other.origin;
    }
};

/// D_s, the aligned MT copy, accumulated human translations and the two test sets.
struct DatasetBundle {
    std::vector<Example> d_source;
    std::vector<Example> d_mt;
    std::vector<Example> d_ht;  // grows per round; id == selected source id
    std::vector<Example> test_source;
    std::vector<Example> test_target;
    std::map<std::string, std::string> alignment;  // source id -> MT id

    bool operator==(const DatasetBundle&) const = default;

    const Example& source_by_id(const std::string& id) const;
    const Example& mt_for_source(const std::string& source_id) const;

    /// Throws integrity error naming the broken invariant.
    void validate() const;
};

/// Assigns template ids by sorted canonical string over every LF in the bundle.
void assign_template_ids(DatasetBundle& bundle);

struct BudgetSchedule {
    std::size_t pool_size = 0;
    std::vector<double> cumulative_fractions;

    std::size_t rounds() const { return cumulative_fractions.size(); }
};

struct RoundBudget {
    std::size_t cumulative = 0;
    std::size_t increment = 0;
};

/// cumulative_q = max(1, floor(N * f_q)); increment_q = cumulative_q - cumulative_{q-1}.
/// Throws range error unless 1 <= round <= Q, parameter error when the
/// schedule does not yield strictly increasing counts.
RoundBudget budget_for_round(const BudgetSchedule& schedule, std::size_t round);

using ScoreMap = std::unordered_map<std::string, double>;

/// Highest k scores; ties go to the earlier pool position. -inf entries are
/// never returned: if fewer than k finite scores exist the selection is exhausted.
std::vector<std::string> topk_select(const ScoreMap& scores, std::size_t k, std::span<const std::string> pool);

/// Same contract over scores aligned with the pool order; returns pool indices.
std::vector<std::size_t> topk_select_indices(std::span<const double> scores, std::size_t k);

/// D_s, then D_mt in alignment order, then D_ht in selection order.
std::vector<Example> merge_training_set(const DatasetBundle& bundle);

struct RoundState {
    std::size_t round = 0;
    std::vector<std::string> selected_ids;    // selection order
    std::vector<std::string> remaining_pool;  // pool order
    std::map<std::string, double> metrics;
    std::uint64_t rng_seed = 0;

    bool operator==(const RoundState&) const = default;
};

class FeatureVector {
public:
    FeatureVector() = default;
    explicit FeatureVector(std::vector<double> values);

    std::span<const double> values() const { return values_; }
    std::size_t dimension() const { return values_.size(); }
    double norm() const { return norm_; }
    double operator[](std::size_t i) const { return values_[i]; }

    bool operator==(const FeatureVector& other) const { return values_ == other.values_; }

private:
    std::vector<double> values_;
    double norm_ = 0.0;
};

double squared_distance(const FeatureVector& a, const FeatureVector& b);
double euclidean_distance(const FeatureVector& a, const FeatureVector& b);

struct Checkpoint {
    RoundState state;
    DatasetBundle bundle;

    bool operator==(const Checkpoint&) const = default;
};

inline constexpr int kCheckpointSchemaVersion = 1;

void checkpoint_save(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws integrity error naming the offending field on any malformed input.
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace hat
