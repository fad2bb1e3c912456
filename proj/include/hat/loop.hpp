#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hat/acquisition.hpp"
#include "hat/core.hpp"
#include "hat/io.hpp"
#include "hat/parser.hpp"
#include "hat/random.hpp"
#include "hat/simulator.hpp"
#include "hat/textmodel.hpp"

namespace hat {

enum class TranslationMode { simulated, human_service };

std::string_view to_string(TranslationMode mode);
TranslationMode translation_mode_from_string(std::string_view name);

struct LoopConfig {
    Strategy strategy = Strategy::abe_nbest;
    AcquisitionConfig acquisition;
    NGramConfig parser_lm;
    DistillConfig distill;
    std::vector<double> schedule = {0.01, 0.02, 0.04, 0.08, 0.16};
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::size_t frontier_bins = 25;
    std::size_t kde_subsample = 256;
    bool compute_frontier = true;

    void validate() const;
};

json loop_config_to_json(const LoopConfig& config);
/// Missing keys keep their defaults; unknown keys are a configuration error.
LoopConfig loop_config_from_json(const json& j);

/// Columns of metrics.csv in order.
inline constexpr const char* kMetricColumns[] = {"accuracy_target", "accuracy_source", "js",
                                                 "mtld", "frontier", "bt_discrepancy"};

/// Produces human translations of one round's selection.
class Translator {
public:
    virtual ~Translator() = default;
    /// Returns one target Example per selected source, ids equal to the
    /// source ids, origin human_translated. Throws suspended error when the
    /// translations are not available yet.
    virtual std::vector<Example> translate(std::size_t round, std::span<const Example> selected, Rng& rng) = 0;
};

class SimulatedTranslator final : public Translator {
public:
    explicit SimulatedTranslator(const Oracles& oracles) : oracles_(oracles) {}
    std::vector<Example> translate(std::size_t round, std::span<const Example> selected, Rng& rng) override;

private:
    const Oracles& oracles_;
};

/// Per-round artefacts written to a run directory.
class RunDirectory {
public:
    explicit RunDirectory(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path checkpoint_path(std::size_t round) const;
    std::filesystem::path scores_path(std::size_t round) const;
    std::filesystem::path ht_path(std::size_t round) const;
    std::filesystem::path metrics_path() const { return root_ / "metrics.csv"; }
    std::filesystem::path config_path() const { return root_ / "config.json"; }

    void write_config(const json& config) const;
    void write_scores(std::size_t round, const std::string& csv) const;
    void write_ht(std::size_t round, const std::vector<Example>& examples) const;
    void write_checkpoint(const Checkpoint& checkpoint) const;
    void write_metrics(std::span<const RoundState> history) const;

    /// Highest-numbered checkpoint, if any.
    std::optional<std::size_t> latest_checkpoint() const;
    /// Checkpoints 0..round in order.
    std::vector<RoundState> load_history(std::size_t round) const;

private:
    std::filesystem::path root_;
};

std::string metrics_to_csv(std::span<const RoundState> history);

/// Everything a round needs that is fixed for the whole run.
struct RunContext {
    const Oracles* oracles = nullptr;
    LoopConfig config;
    Translator* translator = nullptr;
    const RunDirectory* directory = nullptr;  // optional
};

/// Selection models fitted on the current training data and remaining pool.
struct RoundModels {
    SurrogateParser parser;
    ConditionalTranslationModel translation;
    std::optional<KdeModel> kde;
    std::optional<ClusterModel> clusters;
    std::map<int, NGramLM> source_lms;
    AcquisitionModels view;
};

/// Fits every model the strategy reads. `cumulative` is the budget total
/// including the round being selected; it sizes the clustering.
RoundModels fit_round_models(const DatasetBundle& bundle, const RoundState& state, std::size_t cumulative,
                             const RunContext& context);

/// Metrics of the current training data under the kMetricColumns keys.
/// metrics.csv takes cumulative_budget from the selection size.
std::map<std::string, double> evaluate_round(const DatasetBundle& bundle, const RoundState& state,
                                             const SurrogateParser& parser, const RunContext& context);

/// Round 0: train on D_s plus the MT copy and evaluate.
RoundState initial_state(const DatasetBundle& bundle, const RunContext& context);

struct RoundSelection {
    AcquisitionScores scores;          // over the remaining pool, pool order
    std::vector<Example> selected;     // selection order
};

/// Fits the round models and selects k utterances from the remaining pool
/// without translating them.
RoundSelection select_round(const DatasetBundle& bundle, const RoundState& state, std::size_t k,
                            const RunContext& context);

struct RoundOutcome {
    RoundState state;
    AcquisitionScores scores;
    std::vector<Example> translations;
};

/// Selects k utterances, translates them, appends them to `bundle` and
/// evaluates. k = 0 returns the state with the round advanced and metrics unchanged.
RoundOutcome run_round(const RoundState& state, DatasetBundle& bundle, std::size_t k, const RunContext& context);

struct RunResult {
    std::vector<RoundState> history;  // rounds 0..Q
    DatasetBundle bundle;
};

/// Rounds 0..Q. With a run directory, resumes from its latest checkpoint and
/// writes scores, HT files, checkpoints and metrics.csv as it goes.
RunResult run_hat(DatasetBundle bundle, const RunContext& context);

struct PairedComparison {
    std::string baseline;
    std::string candidate;
    std::vector<std::uint64_t> seeds;
    std::vector<double> baseline_accuracy;   // final-round target accuracy per seed
    std::vector<double> candidate_accuracy;
    std::vector<double> round0_accuracy;
    double mean_difference = 0.0;  // candidate - baseline
    double t_statistic = 0.0;
    double p_value = 1.0;          // one-sided, candidate > baseline
};

/// One-sided paired t-test of b - a > 0.
void paired_t_test(std::span<const double> a, std::span<const double> b, double& mean_difference, double& t,
                   double& p_value);

/// Runs both strategies on worlds seeded base_seed + i for i < seeds.
PairedComparison compare_strategies(const WorldConfig& world, const LoopConfig& config, Strategy baseline,
                                    Strategy candidate, std::size_t seeds);

json comparison_to_json(const PairedComparison& comparison);

}  // namespace hat
