#include "doctest.h"

#include <cmath>
#include <numeric>
#include <set>

#include "hat/error.hpp"
#include "hat/simulator.hpp"
#include "helpers.hpp"

using namespace hat;
using hat::testing::TempDir;

namespace {

WorldConfig small(std::uint64_t seed = 1) {
    WorldConfig c;
    c.n_lfs = 10;
    c.pool_size = 80;
    c.test_size = 40;
    c.seed = seed;
    return c;
}

double mass_on_lf(const Oracles& o, const std::vector<double>& p, std::size_t lf) {
    const std::size_t m = o.config().paraphrases_per_lf_target;
    double s = 0.0;
    for (std::size_t i = lf * m; i < (lf + 1) * m; ++i) s += p[i];
    return s;
}

}  // namespace

TEST_SUITE("simulator") {
    TEST_CASE("generated world shape") {
        auto w = generate_world(small());
        CHECK(w.bundle.d_source.size() == 80);
        CHECK(w.bundle.d_mt.size() == 80);
        CHECK(w.bundle.d_ht.empty());
        CHECK(w.bundle.test_source.size() == 40);
        CHECK(w.bundle.test_target.size() == 40);
        CHECK_NOTHROW(w.bundle.validate());
        CHECK(w.oracles.num_lfs() == 10);
        CHECK(w.oracles.bank_size() == 10 * w.oracles.config().paraphrases_per_lf_target);
        std::set<std::string> lfs;
        for (const auto& e : w.bundle.d_source) lfs.insert(e.lf.canonical);
        CHECK(lfs.size() == 10);
        for (const auto& e : w.bundle.test_target) CHECK(e.origin == Origin::human_translated);
        for (std::size_t k = 0; k < 10; ++k) {
            const auto& ht = w.oracles.p_ht(k);
            const auto& mt = w.oracles.p_mt(k);
            CHECK(std::accumulate(ht.begin(), ht.end(), 0.0) == doctest::Approx(1.0));
            CHECK(std::accumulate(mt.begin(), mt.end(), 0.0) == doctest::Approx(1.0));
            for (double v : ht) CHECK(v > 0.0);
            CHECK(w.oracles.lf(k).template_id == static_cast<int>(k));
        }
    }

    TEST_CASE("full bias and no error give one-hot correct MT") {
        auto c = small();
        c.bias = 1.0;
        c.error = 0.0;
        auto w = generate_world(c);
        for (std::size_t k = 0; k < w.oracles.num_lfs(); ++k) {
            const auto& mt = w.oracles.p_mt(k);
            CHECK(*std::max_element(mt.begin(), mt.end()) == doctest::Approx(1.0));
            CHECK(mass_on_lf(w.oracles, mt, k) == doctest::Approx(1.0));
        }
        for (std::size_t i = 0; i < w.bundle.d_source.size(); ++i) {
            auto realized = w.oracles.realized_target_lf(w.bundle.d_mt[i].utterance.tokens);
            CHECK(realized == w.bundle.d_source[i].lf.template_id);
        }
    }

    TEST_CASE("full error makes every MT realize another LF") {
        auto c = small();
        c.error = 1.0;
        auto w = generate_world(c);
        for (std::size_t k = 0; k < w.oracles.num_lfs(); ++k)
            CHECK(mass_on_lf(w.oracles, w.oracles.p_mt(k), k) == doctest::Approx(0.0));
        for (std::size_t i = 0; i < w.bundle.d_source.size(); ++i)
            CHECK(w.oracles.realized_target_lf(w.bundle.d_mt[i].utterance.tokens) != w.bundle.d_source[i].lf.template_id);
    }

    TEST_CASE("same seed gives bit-identical worlds") {
        auto a = generate_world(small(9));
        auto b = generate_world(small(9));
        CHECK(a.bundle == b.bundle);
        for (std::size_t k = 0; k < a.oracles.num_lfs(); ++k) {
            CHECK(a.oracles.p_ht(k) == b.oracles.p_ht(k));
            CHECK(a.oracles.p_mt(k) == b.oracles.p_mt(k));
        }
        CHECK_FALSE(generate_world(small(10)).bundle == a.bundle);
    }

    TEST_CASE("MT is a deterministic function of the source") {
        auto w = generate_world(small());
        for (std::size_t i = 0; i < 10; ++i) {
            const auto& src = w.bundle.d_source[i].utterance;
            CHECK(w.oracles.mt(src).tokens == w.oracles.mt(src).tokens);
            CHECK(w.oracles.mt(src).tokens == w.bundle.d_mt[i].utterance.tokens);
        }
    }

    TEST_CASE("mixture entropy examples") {
        std::vector<double> ht{0.25, 0.25, 0.25, 0.25}, mt{1.0, 0.0, 0.0, 0.0};
        CHECK(mixture_entropy(ht, mt, 0.0) == doctest::Approx(0.0));
        CHECK(mixture_entropy(ht, mt, 1.0) == doctest::Approx(std::log(4.0)));
        CHECK(mixture_entropy(ht, mt, 1.0) == doctest::Approx(1.38629).epsilon(1e-5));
        CHECK(mixture_entropy(ht, mt, 0.5) == doctest::Approx(1.07354).epsilon(1e-5));
    }

    TEST_CASE("mixture KL examples") {
        std::vector<double> a{0.5, 0.5}, b{1.0, 0.0};
        CHECK(mixture_kl(a, b, 1.0) == doctest::Approx(0.0));
        CHECK(mixture_kl(a, b, 0.0) == doctest::Approx(0.69315).epsilon(1e-5));
        CHECK(mixture_kl(a, b, 0.5) == doctest::Approx(0.13081).epsilon(1e-4));
        std::vector<double> narrow{1.0, 0.0}, wide{0.5, 0.5};
        CHECK_THROWS_AS(mixture_kl(narrow, wide, 0.5), Error);
    }

    TEST_CASE("KL to the human component shrinks as its weight grows") {
        Rng rng = derive_rng(31, 0);
        for (int trial = 0; trial < 200; ++trial) {
            std::size_t n = 2 + uniform_index(rng, 8);
            std::vector<double> ht(n), mt(n);
            for (auto& v : ht) v = 0.01 + uniform01(rng);
            for (auto& v : mt) v = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
            mt[0] += 0.1;
            double sh = std::accumulate(ht.begin(), ht.end(), 0.0), sm = std::accumulate(mt.begin(), mt.end(), 0.0);
            for (auto& v : ht) v /= sh;
            for (auto& v : mt) v /= sm;
            double prev = mixture_kl(ht, mt, 0.0);
            for (int s = 1; s <= 10; ++s) {
                double cur = mixture_kl(ht, mt, s / 10.0);
                CHECK(cur <= prev + 1e-12);
                prev = cur;
            }
            CHECK(prev == doctest::Approx(0.0));
        }
    }

    TEST_CASE("oracle entropy and KL use the world tables") {
        auto w = generate_world(small());
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(true_conditional_entropy(w.oracles, k, 0.3) ==
                  doctest::Approx(mixture_entropy(w.oracles.p_ht(k), w.oracles.p_mt(k), 0.3)));
            CHECK(kl_to_component(w.oracles, k, 0.3) ==
                  doctest::Approx(mixture_kl(w.oracles.p_ht(k), w.oracles.p_mt(k), 0.3)));
            CHECK(kl_to_component(w.oracles, k, 1.0) == doctest::Approx(0.0));
        }
    }

    TEST_CASE("zero temperature makes human translation deterministic") {
        auto c = small();
        c.ht_temperature = 0.0;
        auto w = generate_world(c);
        const auto& src = w.bundle.d_source[0];
        Rng rng = derive_rng(1, 1);
        auto first = simulated_ht(w.oracles, src, rng);
        for (int i = 0; i < 30; ++i) CHECK(simulated_ht(w.oracles, src, rng).utterance.tokens == first.utterance.tokens);
    }

    TEST_CASE("human translation varies and keeps ids and LFs") {
        auto w = generate_world(small());
        const auto& src = w.bundle.d_source[3];
        Rng rng = derive_rng(2, 2);
        std::set<TokenSeq> seen;
        for (int i = 0; i < 60; ++i) {
            auto ht = simulated_ht(w.oracles, src, rng);
            CHECK(ht.origin == Origin::human_translated);
            CHECK(ht.utterance.id == src.utterance.id);
            CHECK(ht.utterance.language == kTargetLanguage);
            CHECK(ht.lf == src.lf);
            CHECK(w.oracles.realized_target_lf(ht.utterance.tokens) == src.lf.template_id);
            seen.insert(ht.utterance.tokens);
        }
        CHECK(seen.size() >= 2);
    }

    TEST_CASE("back-translation error rate") {
        auto c = small();
        c.error = 0.0;
        c.bt_error = 0.0;
        auto w = generate_world(c);
        for (const auto& e : w.bundle.d_source) {
            auto bt = back_translate(w.oracles, w.oracles.mt(e.utterance));
            CHECK(w.oracles.realized_source_lf(bt.tokens) == e.lf.template_id);
            CHECK(bt.language == kSourceLanguage);
        }
        c.bt_error = 1.0;
        auto wrong = generate_world(c);
        for (const auto& e : wrong.bundle.d_source) {
            auto bt = back_translate(wrong.oracles, wrong.oracles.mt(e.utterance));
            CHECK(wrong.oracles.realized_source_lf(bt.tokens) != e.lf.template_id);
            CHECK(bt.tokens == back_translate(wrong.oracles, wrong.oracles.mt(e.utterance)).tokens);
        }
    }

    TEST_CASE("unknown target tokens back-translate to unk") {
        auto w = generate_world(small());
        auto bt = w.oracles.bt(make_utterance("x", "tgt", "zzqx"));
        CHECK(bt.tokens == TokenSeq{"unk"});
    }

    TEST_CASE("world configuration parsing") {
        auto c = small(4);
        auto j = world_config_to_json(c);
        auto back = world_config_from_json(j);
        CHECK(world_config_to_json(back) == j);
        CHECK(world_config_from_json(json::object()).n_lfs == WorldConfig{}.n_lfs);
        CHECK_THROWS_AS(world_config_from_json(json{{"n_lfz", 3}}), Error);
        CHECK_THROWS_AS(world_config_from_json(json{{"bias", 1.5}}), Error);
        CHECK_THROWS_AS(world_config_from_json(json{{"n_lfs", 80}, {"pool_size", 10}}), Error);
        TempDir dir("world_cfg");
        write_file_atomic(dir.path() / "w.json", "{not json");
        CHECK_THROWS_AS(load_world_config(dir.path() / "w.json"), Error);
        write_file_atomic(dir.path() / "ok.json", j.dump());
        CHECK(load_world_config(dir.path() / "ok.json").seed == 4);
    }
}
