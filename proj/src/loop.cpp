#include "hat/loop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hat/error.hpp"
#include "hat/geometry.hpp"
#include "hat/metrics.hpp"

namespace hat {

namespace {

std::vector<TokenSeq> target_training_corpus(const DatasetBundle& bundle) {
    std::vector<TokenSeq> out;
    out.reserve(bundle.d_mt.size() + bundle.d_ht.size());
    for (const auto& e : bundle.d_mt) out.push_back(e.utterance.tokens);
    for (const auto& e : bundle.d_ht) out.push_back(e.utterance.tokens);
    return out;
}

std::vector<TokenSeq> corpus_of(std::span<const Example> examples) {
    std::vector<TokenSeq> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.utterance.tokens);
    return out;
}

std::vector<FeatureVector> embed_all(std::span<const TokenSeq> corpus) {
    std::vector<FeatureVector> out;
    out.reserve(corpus.size());
    for (const auto& t : corpus) out.push_back(hash_embed(t));
    return out;
}

std::unordered_map<std::string, const Example*> index_sources(const DatasetBundle& bundle) {
    std::unordered_map<std::string, const Example*> out;
    for (const auto& e : bundle.d_source) out.emplace(e.utterance.id, &e);
    return out;
}

const Example& lookup(const std::unordered_map<std::string, const Example*>& index, const std::string& id) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorCode::integrity, "pool id '" + id + "' is not in d_source");
    return *it->second;
}

bool needs_clusters(Strategy s) {
    return s == Strategy::abe_nbest || s == Strategy::abe_max || s == Strategy::cluster || s == Strategy::csse;
}
bool needs_kde(Strategy s) { return s == Strategy::abe_nbest || s == Strategy::abe_max || s == Strategy::csse; }

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw Error(ErrorCode::configuration, fmt::format("unknown key '{}' in {}", key, where));
}

}  // namespace

std::string_view to_string(TranslationMode mode) {
    return mode == TranslationMode::simulated ? "simulated" : "human-service";
}

TranslationMode translation_mode_from_string(std::string_view name) {
    if (name == "simulated") return TranslationMode::simulated;
    if (name == "human-service") return TranslationMode::human_service;
    throw Error(ErrorCode::configuration, fmt::format("unknown translation mode '{}'", name));
}

void LoopConfig::validate() const {
    acquisition.validate();
    if (schedule.empty()) throw Error(ErrorCode::configuration, "schedule must have at least one round");
    if (frontier_bins == 0) throw Error(ErrorCode::configuration, "frontier_bins must be positive");
    if (kde_subsample < 2) throw Error(ErrorCode::configuration, "kde_subsample must be at least 2");
    if (workers == 0) throw Error(ErrorCode::configuration, "workers must be positive");
}

json loop_config_to_json(const LoopConfig& c) {
    return json{
        {"strategy", std::string(to_string(c.strategy))},
        {"schedule", c.schedule},
        {"seed", c.seed},
        {"workers", c.workers},
        {"frontier_bins", c.frontier_bins},
        {"kde_subsample", c.kde_subsample},
        {"compute_frontier", c.compute_frontier},
        {"acquisition",
         {{"n", c.acquisition.n},
          {"alpha", {{"bias", c.acquisition.alpha_bias}, {"error", c.acquisition.alpha_error},
                     {"density", c.acquisition.alpha_density}}},
          {"beam_width", c.acquisition.beam_width},
          {"max_len", c.acquisition.max_len},
          {"k_mult", c.acquisition.k_mult}}},
        {"parser", {{"add_k", c.parser_lm.add_k}, {"interpolation", c.parser_lm.interpolation}}},
        {"distill",
         {{"add_k", c.distill.lm.add_k},
          {"interpolation", c.distill.lm.interpolation},
          {"factorization", c.distill.factorization == Factorization::by_lf ? "by_lf" : "per_source"}}},
    };
}

LoopConfig loop_config_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::configuration, "run config must be a JSON object");
    LoopConfig c;
    try {
        reject_unknown(j,
                       {"strategy", "schedule", "seed", "workers", "frontier_bins", "kde_subsample",
                        "compute_frontier", "acquisition", "parser", "distill"},
                       "run config");
        if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        read_key(j, "schedule", c.schedule);
        read_key(j, "seed", c.seed);
        read_key(j, "workers", c.workers);
        read_key(j, "frontier_bins", c.frontier_bins);
        read_key(j, "kde_subsample", c.kde_subsample);
        read_key(j, "compute_frontier", c.compute_frontier);
        if (j.contains("acquisition")) {
            const json& a = j.at("acquisition");
            reject_unknown(a, {"n", "alpha", "beam_width", "max_len", "k_mult"}, "acquisition");
            read_key(a, "n", c.acquisition.n);
            read_key(a, "beam_width", c.acquisition.beam_width);
            read_key(a, "max_len", c.acquisition.max_len);
            read_key(a, "k_mult", c.acquisition.k_mult);
            if (a.contains("alpha")) {
                const json& al = a.at("alpha");
                reject_unknown(al, {"bias", "error", "density"}, "alpha");
                read_key(al, "bias", c.acquisition.alpha_bias);
                read_key(al, "error", c.acquisition.alpha_error);
                read_key(al, "density", c.acquisition.alpha_density);
            }
        }
        if (j.contains("parser")) {
            const json& p = j.at("parser");
            reject_unknown(p, {"add_k", "interpolation"}, "parser");
            read_key(p, "add_k", c.parser_lm.add_k);
            read_key(p, "interpolation", c.parser_lm.interpolation);
        }
        if (j.contains("distill")) {
            const json& d = j.at("distill");
            reject_unknown(d, {"add_k", "interpolation", "factorization"}, "distill");
            read_key(d, "add_k", c.distill.lm.add_k);
            read_key(d, "interpolation", c.distill.lm.interpolation);
            if (d.contains("factorization")) {
                auto f = d.at("factorization").get<std::string>();
                if (f == "by_lf") c.distill.factorization = Factorization::by_lf;
                else if (f == "per_source") c.distill.factorization = Factorization::per_source;
                else throw Error(ErrorCode::configuration, "factorization must be by_lf or per_source");
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::configuration, std::string("bad run config value: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<Example> SimulatedTranslator::translate(std::size_t, std::span<const Example> selected, Rng& rng) {
    std::vector<Example> out;
    out.reserve(selected.size());
    for (const auto& s : selected) out.push_back(simulated_ht(oracles_, s, rng));
    return out;
}

RunDirectory::RunDirectory(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    for (const char* sub : {"", "scores", "checkpoints", "ht"}) {
        std::filesystem::create_directories(root_ / sub, ec);
        if (ec) throw Error(ErrorCode::io, "cannot create '" + (root_ / sub).string() + "': " + ec.message());
    }
}

std::filesystem::path RunDirectory::checkpoint_path(std::size_t round) const {
    return root_ / "checkpoints" / fmt::format("round_{}.json", round);
}
std::filesystem::path RunDirectory::scores_path(std::size_t round) const {
    return root_ / "scores" / fmt::format("round_{}.csv", round);
}
std::filesystem::path RunDirectory::ht_path(std::size_t round) const {
    return root_ / "ht" / fmt::format("round_{}.jsonl", round);
}

void RunDirectory::write_config(const json& config) const { write_file_atomic(config_path(), config.dump(2) + "\n"); }

void RunDirectory::write_scores(std::size_t round, const std::string& csv) const {
    write_file_atomic(scores_path(round), csv);
}

void RunDirectory::write_ht(std::size_t round, const std::vector<Example>& examples) const {
    write_jsonl(ht_path(round), examples);
}

void RunDirectory::write_checkpoint(const Checkpoint& checkpoint) const {
    checkpoint_save(checkpoint, checkpoint_path(checkpoint.state.round));
}

void RunDirectory::write_metrics(std::span<const RoundState> history) const {
    write_file_atomic(metrics_path(), metrics_to_csv(history));
}

std::optional<std::size_t> RunDirectory::latest_checkpoint() const {
    std::optional<std::size_t> best;
    for (std::size_t q = 0; std::filesystem::exists(checkpoint_path(q)); ++q) best = q;
    return best;
}

std::vector<RoundState> RunDirectory::load_history(std::size_t round) const {
    std::vector<RoundState> out;
    for (std::size_t q = 0; q <= round; ++q) out.push_back(checkpoint_load(checkpoint_path(q)).state);
    return out;
}

std::string metrics_to_csv(std::span<const RoundState> history) {
    std::string out = "round";
    for (const char* c : kMetricColumns) (out += ',') += c;
    out += ",cumulative_budget\n";
    for (const auto& s : history) {
        out += fmt::format("{}", s.round);
        for (const char* c : kMetricColumns) {
            out += ',';
            if (auto it = s.metrics.find(c); it != s.metrics.end()) out += fmt::format("{}", it->second);
        }
        out += fmt::format(",{}\n", s.selected_ids.size());
    }
    return out;
}

RoundModels fit_round_models(const DatasetBundle& bundle, const RoundState& state, std::size_t cumulative,
                             const RunContext& context) {
    const LoopConfig& cfg = context.config;
    const Oracles& oracles = *context.oracles;
    RoundModels m;
    m.parser = SurrogateParser::train(merge_training_set(bundle), cfg.parser_lm);
    auto pairs = training_pairs(bundle);
    m.translation = distill_translation_model(pairs, bundle.d_source, cfg.distill);

    auto sources = index_sources(bundle);
    AcquisitionModels& v = m.view;
    v.round = state.round + 1;
    v.back_translate = [&oracles](const Utterance& u) { return oracles.bt(u); };

    std::set<std::pair<int, TokenSeq>> seen;
    for (const auto& p : pairs) {
        int lf = p.source.lf.template_id;
        if (seen.emplace(lf, p.target.utterance.tokens).second)
            v.translations_by_lf[lf].push_back(p.target.utterance.tokens);
    }
    for (const auto& e : bundle.d_source) ++v.lf_frequency[e.lf.template_id];
    for (const auto& id : state.remaining_pool) v.mt_of_source[id] = bundle.mt_for_source(id).utterance;

    std::vector<LabeledPoint> points;
    points.reserve(state.remaining_pool.size());
    for (const auto& id : state.remaining_pool) {
        FeatureVector f = hash_embed(lookup(sources, id).utterance.tokens);
        v.features.emplace(id, f);
        points.push_back({id, std::move(f)});
    }

    if (cfg.strategy == Strategy::lcs_bw) {
        std::map<int, std::vector<TokenSeq>> by_lf;
        for (const auto& e : bundle.d_source) by_lf[e.lf.template_id].push_back(e.utterance.tokens);
        for (const auto& [lf, corpus] : by_lf) m.source_lms.emplace(lf, NGramLM::train(corpus, cfg.parser_lm));
    }
    if (needs_kde(cfg.strategy) && !points.empty()) {
        std::vector<FeatureVector> feats;
        feats.reserve(points.size());
        for (const auto& p : points) feats.push_back(p.features);
        double h = KdeModel::median_heuristic(feats, cfg.kde_subsample, cfg.seed ^ (state.round + 1));
        m.kde.emplace(std::move(feats), h);
    }
    if (needs_clusters(cfg.strategy) && !points.empty()) {
        std::vector<FeatureVector> fixed;
        fixed.reserve(state.selected_ids.size());
        for (const auto& id : state.selected_ids) fixed.push_back(hash_embed(lookup(sources, id).utterance.tokens));
        auto k_total = static_cast<std::size_t>(std::ceil(cfg.acquisition.k_mult * static_cast<double>(cumulative)));
        k_total = std::max(k_total, fixed.size() + 1);
        KMeansOptions opts;
        opts.workers = cfg.workers;
        m.clusters = incremental_kmeans(points, fixed, k_total, derive_rng(cfg.seed, state.round + 1)(), opts);
    }
    return m;
}

std::map<std::string, double> evaluate_round(const DatasetBundle& bundle, const RoundState& state,
                                             const SurrogateParser& parser, const RunContext& context) {
    const LoopConfig& cfg = context.config;
    std::map<std::string, double> out;
    out["accuracy_target"] = evaluate_accuracy(parser, bundle.test_target);
    out["accuracy_source"] = evaluate_accuracy(parser, bundle.test_source);

    auto train = target_training_corpus(bundle);
    auto test = corpus_of(bundle.test_target);
    out["js"] = js_divergence(ngram_distribution(train), ngram_distribution(test));
    out["mtld"] = corpus_mtld(train);
    if (cfg.compute_frontier) {
        auto tf = embed_all(train);
        auto sf = embed_all(test);
        std::size_t bins = std::min({cfg.frontier_bins, tf.size(), sf.size()});
        FrontierOptions fo;
        fo.seed = cfg.seed;
        out["frontier"] = divergence_frontier(tf, sf, bins, fo);
    }
    if (context.oracles) {
        if (state.selected_ids.empty()) {
            out["bt_discrepancy"] = bt_discrepancy_rate(bundle.d_source, *context.oracles);
        } else {
            auto sources = index_sources(bundle);
            std::vector<Example> selected;
            for (const auto& id : state.selected_ids) selected.push_back(lookup(sources, id));
            out["bt_discrepancy"] = bt_discrepancy_rate(selected, *context.oracles);
        }
    }
    return out;
}

RoundState initial_state(const DatasetBundle& bundle, const RunContext& context) {
    bundle.validate();
    RoundState s;
    s.round = 0;
    s.rng_seed = context.config.seed;
    for (const auto& e : bundle.d_source) s.remaining_pool.push_back(e.utterance.id);
    for (const auto& e : bundle.d_ht) {
        s.selected_ids.push_back(e.utterance.id);
        s.remaining_pool.erase(std::find(s.remaining_pool.begin(), s.remaining_pool.end(), e.utterance.id));
    }
    auto parser = SurrogateParser::train(merge_training_set(bundle), context.config.parser_lm);
    s.metrics = evaluate_round(bundle, s, parser, context);
    return s;
}

RoundSelection select_round(const DatasetBundle& bundle, const RoundState& state, std::size_t k,
                            const RunContext& context) {
    const LoopConfig& cfg = context.config;
    if (k == 0 || k > state.remaining_pool.size())
        throw Error(ErrorCode::selection_exhausted,
                    fmt::format("budget {} does not fit the remaining pool of {}", k, state.remaining_pool.size()));
    const std::size_t cumulative = state.selected_ids.size() + k;
    RoundModels models = fit_round_models(bundle, state, cumulative, context);
    AcquisitionModels view = models.view;
    view.parser = &models.parser;
    view.translation = &models.translation;
    view.kde = models.kde ? &*models.kde : nullptr;
    view.clusters = models.clusters ? &*models.clusters : nullptr;
    view.source_lms = &models.source_lms;

    auto sources = index_sources(bundle);
    std::vector<Example> pool;
    pool.reserve(state.remaining_pool.size());
    for (const auto& id : state.remaining_pool) pool.push_back(lookup(sources, id));

    AcquisitionConfig acq = cfg.acquisition;
    acq.seed = cfg.seed;
    acq.workers = cfg.workers;
    RoundSelection out;
    out.scores = score_pool(cfg.strategy, pool, view, acq);
    for (auto i : topk_select_indices(out.scores.aggregate, k)) out.selected.push_back(pool[i]);
    return out;
}

RoundOutcome run_round(const RoundState& state, DatasetBundle& bundle, std::size_t k, const RunContext& context) {
    const LoopConfig& cfg = context.config;
    RoundOutcome out;
    out.state = state;
    out.state.round = state.round + 1;
    if (k == 0) return out;
    if (k > state.remaining_pool.size())
        throw Error(ErrorCode::selection_exhausted,
                    fmt::format("budget {} exceeds the remaining pool of {}", k, state.remaining_pool.size()));
    if (!context.translator) throw Error(ErrorCode::configuration, "no translator configured");

    const std::size_t q = state.round + 1;
    RoundSelection sel = select_round(bundle, state, k, context);
    out.scores = std::move(sel.scores);
    std::vector<Example> selected = std::move(sel.selected);
    Rng rng = derive_rng(cfg.seed, 0x6874000000ull + q);
    auto translations = context.translator->translate(q, selected, rng);
    if (translations.size() != selected.size())
        throw Error(ErrorCode::integrity, fmt::format("expected {} translations, got {}", selected.size(), translations.size()));
    for (std::size_t i = 0; i < selected.size(); ++i) {
        auto& t = translations[i];
        if (t.utterance.id != selected[i].utterance.id)
            throw Error(ErrorCode::integrity, "translation id '" + t.utterance.id + "' does not match the selection");
        t.lf = selected[i].lf;
        t.origin = Origin::human_translated;
        bundle.d_ht.push_back(t);
    }

    std::unordered_set<std::string> chosen;
    for (const auto& e : selected) {
        out.state.selected_ids.push_back(e.utterance.id);
        chosen.insert(e.utterance.id);
    }
    std::erase_if(out.state.remaining_pool, [&](const std::string& id) { return chosen.count(id) > 0; });
    auto parser = SurrogateParser::train(merge_training_set(bundle), cfg.parser_lm);
    out.state.metrics = evaluate_round(bundle, out.state, parser, context);
    out.translations = std::move(translations);
    spdlog::info("round {}: selected {}, accuracy_target {:.4f}", q, k, out.state.metrics["accuracy_target"]);
    return out;
}

RunResult run_hat(DatasetBundle bundle, const RunContext& context) {
    context.config.validate();
    const RunDirectory* dir = context.directory;
    BudgetSchedule schedule{bundle.d_source.size(), context.config.schedule};
    for (std::size_t q = 1; q <= schedule.rounds(); ++q) budget_for_round(schedule, q);

    RunResult result;
    json config = loop_config_to_json(context.config);
    std::optional<std::size_t> latest;
    if (dir) {
        if (std::filesystem::exists(dir->config_path())) {
            json saved = json::parse(read_file(dir->config_path()));
            if (saved != config)
                throw Error(ErrorCode::configuration,
                            "run directory '" + dir->root().string() + "' holds a run with a different config");
        } else {
            dir->write_config(config);
        }
        latest = dir->latest_checkpoint();
    }
    if (latest) {
        Checkpoint c = checkpoint_load(dir->checkpoint_path(*latest));
        bundle = std::move(c.bundle);
        result.history = dir->load_history(*latest);
        spdlog::info("resuming from round {}", *latest);
    } else {
        result.history.push_back(initial_state(bundle, context));
        if (dir) {
            dir->write_checkpoint({result.history.back(), bundle});
            dir->write_metrics(result.history);
        }
    }

    for (std::size_t q = result.history.back().round + 1; q <= schedule.rounds(); ++q) {
        RoundBudget budget = budget_for_round(schedule, q);
        RoundOutcome outcome = run_round(result.history.back(), bundle, budget.increment, context);
        if (outcome.state.selected_ids.size() != budget.cumulative)
            throw Error(ErrorCode::internal, "cumulative selection does not match the schedule");
        result.history.push_back(outcome.state);
        if (dir) {
            std::set<std::string> picked(outcome.state.selected_ids.end() - static_cast<std::ptrdiff_t>(budget.increment),
                                         outcome.state.selected_ids.end());
            dir->write_scores(q, scores_to_csv(outcome.scores, picked));
            dir->write_ht(q, outcome.translations);
            dir->write_checkpoint({outcome.state, bundle});
            dir->write_metrics(result.history);
        }
    }
    result.bundle = std::move(bundle);
    return result;
}

void paired_t_test(std::span<const double> a, std::span<const double> b, double& mean_difference, double& t,
                   double& p_value) {
    if (a.size() != b.size() || a.size() < 2)
        throw Error(ErrorCode::invalid_argument, "paired test needs two aligned samples of size >= 2");
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += b[i] - a[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (b[i] - a[i] - mean) * (b[i] - a[i] - mean);
    double sd = std::sqrt(ss / (n - 1.0));
    mean_difference = mean;
    if (sd == 0.0) {
        t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                       : (mean < 0.0 ? -std::numeric_limits<double>::infinity() : 0.0);
        p_value = mean > 0.0 ? 0.0 : (mean < 0.0 ? 1.0 : 0.5);
        return;
    }
    t = mean / (sd / std::sqrt(n));
    boost::math::students_t dist(n - 1.0);
    p_value = boost::math::cdf(boost::math::complement(dist, t));
}

PairedComparison compare_strategies(const WorldConfig& world, const LoopConfig& config, Strategy baseline,
                                    Strategy candidate, std::size_t seeds) {
    PairedComparison out;
    out.baseline = std::string(to_string(baseline));
    out.candidate = std::string(to_string(candidate));
    for (std::size_t i = 0; i < seeds; ++i) {
        WorldConfig wc = world;
        wc.seed = world.seed + i;
        World w = generate_world(wc);
        SimulatedTranslator translator(w.oracles);
        for (Strategy s : {baseline, candidate}) {
            RunContext ctx;
            ctx.oracles = &w.oracles;
            ctx.config = config;
            ctx.config.strategy = s;
            ctx.config.seed = config.seed + i;
            ctx.translator = &translator;
            RunResult r = run_hat(w.bundle, ctx);
            double acc = r.history.back().metrics.at("accuracy_target");
            if (s == baseline) {
                out.baseline_accuracy.push_back(acc);
                out.round0_accuracy.push_back(r.history.front().metrics.at("accuracy_target"));
            } else {
                out.candidate_accuracy.push_back(acc);
            }
        }
        out.seeds.push_back(wc.seed);
    }
    if (seeds >= 2)
        paired_t_test(out.baseline_accuracy, out.candidate_accuracy, out.mean_difference, out.t_statistic, out.p_value);
    return out;
}

json comparison_to_json(const PairedComparison& c) {
    return json{{"baseline", c.baseline},
                {"candidate", c.candidate},
                {"seeds", c.seeds},
                {"baseline_accuracy", c.baseline_accuracy},
                {"candidate_accuracy", c.candidate_accuracy},
                {"round0_accuracy", c.round0_accuracy},
                {"mean_difference", c.mean_difference},
                {"t_statistic", c.t_statistic},
                {"p_value", c.p_value}};
}

}  // namespace hat
