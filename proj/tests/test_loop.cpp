#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "hat/error.hpp"
#include "hat/loop.hpp"
#include "helpers.hpp"

using namespace hat;
using hat::testing::TempDir;

namespace {

WorldConfig toy_world(std::uint64_t seed = 2) {
    WorldConfig c;
    c.n_lfs = 12;
    c.pool_size = 120;
    c.test_size = 60;
    c.paraphrases_per_lf_source = 3;
    c.seed = seed;
    return c;
}

RunContext context_for(const World& w, Translator& t, Strategy s = Strategy::abe_nbest) {
    RunContext ctx;
    ctx.oracles = &w.oracles;
    ctx.translator = &t;
    ctx.config.strategy = s;
    ctx.config.seed = 11;
    ctx.config.frontier_bins = 8;
    return ctx;
}

// Fails the first time round `fail_round` is requested.
class FlakyTranslator final : public Translator {
public:
    FlakyTranslator(const Oracles& o, std::size_t fail_round) : inner_(o), fail_round_(fail_round) {}
    std::vector<Example> translate(std::size_t round, std::span<const Example> selected, Rng& rng) override {
        if (round == fail_round_ && !failed_) {
            failed_ = true;
            throw Error(ErrorCode::suspended, "round not translated yet");
        }
        return inner_.translate(round, selected, rng);
    }

private:
    SimulatedTranslator inner_;
    std::size_t fail_round_;
    bool failed_ = false;
};

}  // namespace

TEST_SUITE("loop") {
    TEST_CASE("one round of six") {
        auto w = generate_world(toy_world());
        SimulatedTranslator t(w.oracles);
        auto ctx = context_for(w, t);
        DatasetBundle bundle = w.bundle;
        auto s0 = initial_state(bundle, ctx);
        CHECK(s0.round == 0);
        CHECK(s0.remaining_pool.size() == 120);
        auto out = run_round(s0, bundle, 6, ctx);
        CHECK(out.state.round == 1);
        CHECK(bundle.d_ht.size() == 6);
        CHECK(out.translations.size() == 6);
        CHECK(out.state.remaining_pool.size() == 114);
        CHECK(out.state.selected_ids.size() == 6);
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(bundle.d_ht[i].utterance.id == out.state.selected_ids[i]);
            CHECK(bundle.d_ht[i].origin == Origin::human_translated);
            CHECK(std::find(out.state.remaining_pool.begin(), out.state.remaining_pool.end(),
                            out.state.selected_ids[i]) == out.state.remaining_pool.end());
        }
        CHECK_NOTHROW(bundle.validate());
        for (const char* key : kMetricColumns) CHECK(out.state.metrics.count(key) == 1);
        CHECK(out.state.metrics.size() == std::size(kMetricColumns));
        CHECK(out.scores.ids.size() == 120);
    }

    TEST_CASE("an empty round only advances the counter") {
        auto w = generate_world(toy_world());
        SimulatedTranslator t(w.oracles);
        auto ctx = context_for(w, t);
        DatasetBundle bundle = w.bundle;
        auto s0 = initial_state(bundle, ctx);
        auto out = run_round(s0, bundle, 0, ctx);
        CHECK(out.state.round == 1);
        CHECK(out.state.metrics == s0.metrics);
        CHECK(out.state.remaining_pool == s0.remaining_pool);
        CHECK(bundle.d_ht.empty());
    }

    TEST_CASE("a budget larger than the pool is exhausted") {
        auto w = generate_world(toy_world());
        SimulatedTranslator t(w.oracles);
        auto ctx = context_for(w, t, Strategy::random);
        DatasetBundle bundle = w.bundle;
        auto s0 = initial_state(bundle, ctx);
        try {
            run_round(s0, bundle, 121, ctx);
            FAIL("expected selection exhaustion");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::selection_exhausted);
        }
    }

    TEST_CASE("full run writes every artefact") {
        auto w = generate_world(toy_world());
        SimulatedTranslator t(w.oracles);
        auto ctx = context_for(w, t);
        TempDir dir("loop_full");
        RunDirectory rd(dir.path() / "run");
        ctx.directory = &rd;
        auto result = run_hat(w.bundle, ctx);
        REQUIRE(result.history.size() == 6);
        std::vector<double> expected{0, 1, 2, 4, 9, 19};
        std::set<std::string> all;
        for (std::size_t q = 0; q < 6; ++q) {
            CHECK(result.history[q].round == q);
            CHECK(static_cast<double>(result.history[q].selected_ids.size()) == expected[q]);
            CHECK(result.history[q].selected_ids.size() + result.history[q].remaining_pool.size() == 120);
            CHECK(std::filesystem::exists(rd.checkpoint_path(q)));
            if (q) {
                CHECK(std::filesystem::exists(rd.scores_path(q)));
                CHECK(std::filesystem::exists(rd.ht_path(q)));
            }
        }
        for (const auto& id : result.history.back().selected_ids) CHECK(all.insert(id).second);
        CHECK(result.bundle.d_ht.size() == 19);
        std::string csv = read_file(rd.metrics_path());
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
        CHECK(csv.rfind("round,accuracy_target,accuracy_source,js,mtld,frontier,bt_discrepancy,cumulative_budget", 0) == 0);
        CHECK(rd.latest_checkpoint() == std::optional<std::size_t>(5));
        CHECK(metrics_to_csv(result.history) == csv);
    }

    TEST_CASE("a suspended round resumes to the uninterrupted result") {
        auto w = generate_world(toy_world(5));
        TempDir dir("loop_resume");

        SimulatedTranslator plain(w.oracles);
        auto ctx = context_for(w, plain);
        RunDirectory straight(dir.path() / "straight");
        ctx.directory = &straight;
        auto reference = run_hat(w.bundle, ctx);

        FlakyTranslator flaky(w.oracles, 3);
        auto ctx2 = context_for(w, flaky);
        RunDirectory resumed(dir.path() / "resumed");
        ctx2.directory = &resumed;
        try {
            run_hat(w.bundle, ctx2);
            FAIL("expected the run to suspend");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::suspended);
        }
        CHECK(resumed.latest_checkpoint() == std::optional<std::size_t>(2));
        auto again = run_hat(w.bundle, ctx2);
        REQUIRE(again.history.size() == reference.history.size());
        for (std::size_t q = 0; q < again.history.size(); ++q) CHECK(again.history[q] == reference.history[q]);
        CHECK(read_file(resumed.metrics_path()) == read_file(straight.metrics_path()));
        for (std::size_t q = 1; q <= 5; ++q) CHECK(read_file(resumed.scores_path(q)) == read_file(straight.scores_path(q)));
    }

    TEST_CASE("a run directory refuses a different configuration") {
        auto w = generate_world(toy_world());
        SimulatedTranslator t(w.oracles);
        auto ctx = context_for(w, t, Strategy::random);
        ctx.config.compute_frontier = false;
        TempDir dir("loop_mismatch");
        RunDirectory rd(dir.path() / "run");
        ctx.directory = &rd;
        run_hat(w.bundle, ctx);
        ctx.config.seed += 1;
        try {
            run_hat(w.bundle, ctx);
            FAIL("expected a configuration error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::configuration);
        }
    }

    TEST_CASE("round-zero metrics do not depend on the strategy") {
        auto w = generate_world(toy_world());
        SimulatedTranslator t(w.oracles);
        std::map<std::string, double> first;
        for (Strategy s : all_strategies()) {
            auto ctx = context_for(w, t, s);
            auto m = initial_state(w.bundle, ctx).metrics;
            if (first.empty())
                first = m;
            else
                CHECK(m == first);
        }
    }

    TEST_CASE("select_round does not translate") {
        auto w = generate_world(toy_world());
        SimulatedTranslator t(w.oracles);
        auto ctx = context_for(w, t);
        auto s0 = initial_state(w.bundle, ctx);
        auto sel = select_round(w.bundle, s0, 5, ctx);
        CHECK(sel.selected.size() == 5);
        CHECK(sel.scores.ids.size() == 120);
        for (const auto& e : sel.selected) CHECK(e.origin == Origin::source);
        DatasetBundle copy = w.bundle;
        auto out = run_round(s0, copy, 5, ctx);
        for (std::size_t i = 0; i < 5; ++i) CHECK(out.state.selected_ids[i] == sel.selected[i].utterance.id);
        CHECK_THROWS_AS(select_round(w.bundle, s0, 0, ctx), Error);
    }

    TEST_CASE("paired t-test") {
        double mean, t, p;
        std::vector<double> a{0, 0, 0}, b{1, 2, 3};
        paired_t_test(a, b, mean, t, p);
        CHECK(mean == doctest::Approx(2.0));
        CHECK(t == doctest::Approx(2.0 * std::sqrt(3.0)));
        CHECK(p == doctest::Approx(0.5 * (1.0 - t / std::sqrt(t * t + 2.0))));
        std::vector<double> one{1.0};
        CHECK_THROWS_AS(paired_t_test(one, one, mean, t, p), Error);
    }

    TEST_CASE("loop configuration parsing") {
        LoopConfig c;
        c.strategy = Strategy::rttl;
        c.acquisition.n = 7;
        c.schedule = {0.1, 0.3};
        auto j = loop_config_to_json(c);
        CHECK(loop_config_to_json(loop_config_from_json(j)) == j);
        CHECK_THROWS_AS(loop_config_from_json(json{{"strateggy", "random"}}), Error);
        CHECK_THROWS_AS(loop_config_from_json(json{{"strategy", "nope"}}), Error);
        CHECK(translation_mode_from_string("human-service") == TranslationMode::human_service);
        CHECK_THROWS_AS(translation_mode_from_string("robot"), Error);
    }

    TEST_CASE("paired comparison over a few seeds") {
        WorldConfig wc = toy_world();
        LoopConfig lc;
        lc.compute_frontier = false;
        auto cmp = compare_strategies(wc, lc, Strategy::random, Strategy::abe_nbest, 3);
        CHECK(cmp.seeds.size() == 3);
        CHECK(cmp.baseline_accuracy.size() == 3);
        CHECK(cmp.candidate_accuracy.size() == 3);
        auto j = comparison_to_json(cmp);
        CHECK(j.at("baseline") == "random");
        CHECK(j.at("candidate") == "abe-nbest");
        CHECK(cmp.p_value >= 0.0);
        CHECK(cmp.p_value <= 1.0);
    }
}
