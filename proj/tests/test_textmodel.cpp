#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "hat/error.hpp"
#include "hat/random.hpp"
#include "hat/textmodel.hpp"
#include "helpers.hpp"

using namespace hat;
using hat::testing::example;

namespace {

std::vector<TokenSeq> corpus(std::initializer_list<const char*> lines) {
    std::vector<TokenSeq> out;
    for (const char* l : lines) out.push_back(tokenize(l));
    return out;
}

std::vector<TokenSeq> random_corpus(Rng& rng, std::size_t sentences, std::size_t vocab) {
    std::vector<TokenSeq> out;
    for (std::size_t s = 0; s < sentences; ++s) {
        TokenSeq t;
        std::size_t len = 1 + uniform_index(rng, 6);
        for (std::size_t i = 0; i < len; ++i) t.push_back("w" + std::to_string(uniform_index(rng, vocab)));
        out.push_back(t);
    }
    return out;
}

}  // namespace

TEST_SUITE("textmodel") {
    TEST_CASE("tokenize") {
        CHECK(tokenize("Which rivers?") == TokenSeq{"which", "rivers"});
        CHECK(tokenize("").empty());
        CHECK(tokenize("a  b") == TokenSeq{"a", "b"});
        CHECK(tokenize("Größe, Flüsse!") == TokenSeq{"gr\xc3\xb6\xc3\x9f" "e", "fl\xc3\xbcsse"});
        CHECK(join_tokens({"a", "b"}) == "a b");
    }

    TEST_CASE("add-one unigram probability over a four-symbol event space") {
        NGramConfig cfg{1.0, 0.0};
        auto lm = NGramLM::train(corpus({"a b"}), cfg);
        CHECK(lm.event_count() == 4);
        CHECK(lm.prob(lm.id_of("a"), lm.bos()) == doctest::Approx(1.0 / 3.0));
        CHECK(lm.prob(lm.eos(), lm.id_of("b")) == doctest::Approx(1.0 / 6.0));
        CHECK(lm.unigram_count(lm.eos()) == 0);
        CHECK(lm.total_tokens() == 2);
    }

    TEST_CASE("hand-computed two-token log-likelihood") {
        // counts: BOS->a, a->b, b->EOS; unigram a=1, b=1; |E|=4, k=1, l=0.5
        auto lm = NGramLM::train(corpus({"a b"}), NGramConfig{1.0, 0.5});
        double p_a = 0.5 * 2.0 / 5.0 + 0.5 * 2.0 / 6.0;
        double p_b = p_a;
        double p_eos = 0.5 * 2.0 / 5.0 + 0.5 * 1.0 / 6.0;
        TokenSeq s{"a", "b"};
        CHECK(lm.loglik(s) == doctest::Approx(std::log(p_a) + std::log(p_b) + std::log(p_eos)).epsilon(1e-12));
        CHECK(lm.bigram_count(lm.id_of("a"), lm.id_of("b")) == 1);
        CHECK(lm.bigram_count(lm.bos(), lm.id_of("a")) == 1);
        CHECK(lm.bigram_count(lm.id_of("b"), lm.eos()) == 1);
    }

    TEST_CASE("single-token corpus makes EOS the most likely continuation") {
        auto lm = NGramLM::train(corpus({"a"}), NGramConfig{0.1, 0.7});
        auto a = lm.id_of("a");
        double p_eos = lm.prob(lm.eos(), a);
        for (NGramLM::Id w = 0; w < lm.event_count(); ++w)
            if (w != lm.eos()) CHECK(lm.prob(w, a) < p_eos);
    }

    TEST_CASE("empty corpus and bad parameters") {
        std::vector<TokenSeq> empty;
        CHECK_THROWS_AS(NGramLM::train(empty), Error);
        CHECK_THROWS_AS(NGramLM::train(corpus({"a"}), NGramConfig{0.0, 0.5}), Error);
        CHECK_THROWS_AS(NGramLM::train(corpus({"a"}), NGramConfig{0.1, 1.5}), Error);
    }

    TEST_CASE("every history is a normalized distribution") {
        Rng rng = derive_rng(11, 0);
        for (int trial = 0; trial < 100; ++trial) {
            auto c = random_corpus(rng, 1 + uniform_index(rng, 10), 2 + uniform_index(rng, 8));
            NGramConfig cfg{0.01 + uniform01(rng), uniform01(rng)};
            auto lm = NGramLM::train(c, cfg);
            for (NGramLM::Id h = 0; h < lm.event_count() + 1; ++h) {
                if (h == lm.eos()) continue;
                double sum = 0.0;
                for (NGramLM::Id w = 0; w < lm.event_count(); ++w) {
                    double p = lm.prob(w, h);
                    CHECK(p > 0.0);
                    sum += p;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("log-likelihood is finite and non-positive, OOV included") {
        Rng rng = derive_rng(12, 0);
        auto lm = NGramLM::train(random_corpus(rng, 20, 6));
        for (int trial = 0; trial < 100; ++trial) {
            auto s = random_corpus(rng, 1, 9)[0];
            double ll = lm.loglik(s);
            CHECK(std::isfinite(ll));
            CHECK(ll <= 0.0);
        }
    }

    TEST_CASE("one-sentence world with vanishing smoothing has log-likelihood near zero") {
        auto lm = NGramLM::train(corpus({"what is the capital"}), NGramConfig{1e-9, 1.0});
        CHECK(lm.loglik(tokenize("what is the capital")) == doctest::Approx(0.0).epsilon(1e-6));
    }

    TEST_CASE("pure unigram model is order invariant") {
        auto lm = NGramLM::train(corpus({"a b c", "c c a"}), NGramConfig{0.5, 0.0});
        CHECK(lm.loglik(TokenSeq{"a", "b", "c"}) == doctest::Approx(lm.loglik(TokenSeq{"c", "a", "b"})));
        CHECK(lm.loglik(TokenSeq{"b", "b", "a"}) == doctest::Approx(lm.loglik(TokenSeq{"a", "b", "b"})));
    }

    TEST_CASE("beam search matches exhaustive enumeration") {
        auto lm = NGramLM::train(corpus({"a b", "a", "b b a", "b"}), NGramConfig{0.3, 0.6});
        const std::size_t max_len = 6;
        std::vector<double> all;
        std::function<void(TokenSeq&)> rec = [&](TokenSeq& prefix) {
            if (!prefix.empty()) all.push_back(lm.loglik(prefix));
            if (prefix.size() == max_len) return;
            for (const char* w : {"a", "b"}) {
                prefix.push_back(w);
                rec(prefix);
                prefix.pop_back();
            }
        };
        TokenSeq p;
        rec(p);
        std::sort(all.begin(), all.end(), std::greater<>());
        auto hyps = beam_nbest(lm, 256, 8, max_len);
        REQUIRE(hyps.size() == 8);
        std::set<TokenSeq> distinct;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
            CHECK(hyps[i].logprob == doctest::Approx(all[i]).epsilon(1e-12));
            CHECK(hyps[i].logprob == doctest::Approx(lm.loglik(hyps[i].tokens)).epsilon(1e-12));
            distinct.insert(hyps[i].tokens);
            if (i) CHECK(hyps[i - 1].logprob >= hyps[i].logprob);
        }
        CHECK(distinct.size() == hyps.size());
        auto top = beam_nbest(lm, 256, 1, max_len);
        CHECK(top[0] == hyps[0]);
    }

    TEST_CASE("two-sentence support is recovered in order") {
        std::vector<TokenSeq> c;
        for (int i = 0; i < 6; ++i) c.push_back({"x", "p"});
        for (int i = 0; i < 4; ++i) c.push_back({"y", "q"});
        auto lm = NGramLM::train(c, NGramConfig{1e-9, 1.0});
        auto hyps = beam_nbest(lm, 16, 2, 4);
        REQUIRE(hyps.size() == 2);
        CHECK(hyps[0].tokens == TokenSeq{"x", "p"});
        CHECK(hyps[1].tokens == TokenSeq{"y", "q"});
        CHECK(std::exp(hyps[0].logprob) == doctest::Approx(0.6).epsilon(1e-6));
        CHECK(std::exp(hyps[1].logprob) == doctest::Approx(0.4).epsilon(1e-6));
    }

    TEST_CASE("beam rejects impossible requests") {
        auto lm = NGramLM::train(corpus({"a"}));
        CHECK_THROWS_AS(beam_nbest(lm, 1, 2, 4), Error);
        CHECK_THROWS_AS(beam_nbest(lm, 2, 0, 4), Error);
    }

    TEST_CASE("N-best renormalization") {
        std::vector<BeamHypothesis> h{{{"a"}, std::log(0.6)}, {{"b"}, std::log(0.2)}};
        auto w = renormalize_nbest(h);
        CHECK(w[0] == doctest::Approx(0.75));
        CHECK(w[1] == doctest::Approx(0.25));
        CHECK(renormalize_nbest(std::vector<BeamHypothesis>{{{"a"}, -3.0}}) == std::vector<double>{1.0});
        auto far = renormalize_nbest(std::vector<BeamHypothesis>{{{"a"}, -1000.0}, {{"b"}, -1001.0}});
        CHECK(far[0] == doctest::Approx(0.7311).epsilon(1e-4));
        CHECK(far[1] == doctest::Approx(0.2689).epsilon(1e-4));
        CHECK_THROWS_AS(renormalize_nbest(std::vector<BeamHypothesis>{}), Error);
    }

    TEST_CASE("hash embedding is a deterministic unit bag") {
        TokenSeq t{"which", "rivers", "flow"};
        auto a = hash_embed(t);
        CHECK(a == hash_embed(t));
        CHECK(a.dimension() == kDefaultFeatureDimension);
        CHECK(a.norm() == doctest::Approx(1.0));
        CHECK(hash_embed(TokenSeq{"flow", "which", "rivers"}) == a);
        CHECK_FALSE(hash_embed(TokenSeq{"which", "lakes", "flow"}) == a);
        CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
        CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
        CHECK_THROWS_AS(hash_embed(TokenSeq{}), Error);
    }

    TEST_CASE("distillation factorizes by LF") {
        std::vector<TranslationPair> pairs;
        std::vector<Example> pool;
        for (int i = 0; i < 3; ++i) {
            auto s0 = example("a" + std::to_string(i), "which city " + std::to_string(i), "city", 0);
            auto s1 = example("b" + std::to_string(i), "which river " + std::to_string(i), "river", 1);
            pool.push_back(s0);
            pool.push_back(s1);
            pairs.push_back({s0, example("ma" + std::to_string(i), "welche stadt", "city", 0, Origin::machine_translated)});
            pairs.push_back({s1, example("mb" + std::to_string(i), "welcher fluss", "river", 1, Origin::machine_translated)});
        }
        DistillConfig cfg;
        cfg.lm = NGramConfig{1e-6, 1.0};
        auto model = distill_translation_model(pairs, pool, cfg);
        CHECK(model.per_lf().size() == 2);
        CHECK(model.lf_of_source("a1") == 0);
        CHECK(model.lf_of_source("b2") == 1);
        CHECK(&model.model_for_source("a0") == &model.model_for_lf(0));
        CHECK(model.model_key("a0") == model.model_key("a2"));
        CHECK(model.model_key("a0") != model.model_key("b0"));

        auto before = beam_nbest(model.model_for_lf(0), 8, 4, 8);
        auto w = renormalize_nbest(before);
        CHECK(before[0].tokens == TokenSeq{"welche", "stadt"});
        CHECK(w[0] > 0.99);

        pairs.push_back({pool[0], example("a0", "was für eine stadt", "city", 0, Origin::human_translated)});
        auto after_model = distill_translation_model(pairs, pool, cfg);
        auto after = beam_nbest(after_model.model_for_lf(0), 64, 4, 8);
        auto wa = renormalize_nbest(after);
        std::size_t support_before = std::count_if(w.begin(), w.end(), [](double x) { return x > 0.01; });
        std::size_t support_after = std::count_if(wa.begin(), wa.end(), [](double x) { return x > 0.01; });
        CHECK(support_after > support_before);
        std::set<TokenSeq> top2{after[0].tokens, after[1].tokens};
        CHECK(top2.count(TokenSeq{"was", "f\xc3\xbcr", "eine", "stadt"}) == 1);
        auto river = beam_nbest(after_model.model_for_lf(1), 8, 4, 8);
        CHECK(river[0].tokens == TokenSeq{"welcher", "fluss"});
    }

    TEST_CASE("distillation reports pool LFs without pairs") {
        auto s0 = example("a", "which city", "city", 0);
        auto s1 = example("b", "which river", "river", 1);
        std::vector<TranslationPair> pairs{{s0, example("ma", "welche stadt", "city", 0, Origin::machine_translated)}};
        std::vector<Example> pool{s0, s1};
        auto model = distill_translation_model(pairs, pool);
        CHECK(model.per_lf().size() == 1);
        CHECK_FALSE(model.warnings().empty());
        CHECK_FALSE(model.covers("b"));
        CHECK_THROWS_AS(model.model_for_source("b"), Error);
        std::vector<TranslationPair> none;
        CHECK_THROWS_AS(distill_translation_model(none, pool), Error);
    }

    TEST_CASE("per-source factorization keeps one model per source") {
        auto s0 = example("a", "which city", "city", 0);
        auto s1 = example("b", "what city", "city", 0);
        std::vector<TranslationPair> pairs{{s0, example("ma", "welche stadt", "city", 0, Origin::machine_translated)},
                                           {s1, example("mb", "was stadt", "city", 0, Origin::machine_translated)}};
        std::vector<Example> pool{s0, s1};
        DistillConfig cfg;
        cfg.factorization = Factorization::per_source;
        auto model = distill_translation_model(pairs, pool, cfg);
        CHECK(model.model_key("a") != model.model_key("b"));
        CHECK(beam_nbest(model.model_for_source("b"), 4, 1, 6)[0].tokens == TokenSeq{"was", "stadt"});
    }
}
