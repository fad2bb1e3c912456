#include "doctest.h"

#include <cmath>

#include "hat/error.hpp"
#include "hat/parser.hpp"
#include "helpers.hpp"

using namespace hat;
using hat::testing::example;

namespace {

std::vector<Example> two_lf_toy() {
    return {example("1", "city town", "answer(city)", 0), example("2", "town city", "answer(city)", 0),
            example("3", "river lake", "answer(river)", 1), example("4", "lake river", "answer(river)", 1)};
}

}  // namespace

TEST_SUITE("parser") {
    TEST_CASE("single LF parser is certain") {
        std::vector<Example> train{example("1", "a b", "answer(x)", 0), example("2", "c", "answer(x)", 0)};
        auto p = SurrogateParser::train(train);
        CHECK(p.num_classes() == 1);
        for (const char* text : {"a b", "zzz", "b a c"}) {
            auto u = make_utterance("q", "src", text);
            CHECK(parser_loglik(p, u, LogicalForm("answer(x)", 0)) == doctest::Approx(0.0));
            CHECK(parse(p, u).canonical == "answer(x)");
        }
        CHECK_THROWS_AS(p.loglik(TokenSeq{"a"}, LogicalForm("answer(y)", 1)), Error);
    }

    TEST_CASE("disjoint vocabularies are separated") {
        auto p = SurrogateParser::train(two_lf_toy());
        CHECK(p.prior()[0] == doctest::Approx(0.5));
        TokenSeq x{"city", "town"};
        double own = p.loglik(x, LogicalForm("answer(city)", 0));
        double other = p.loglik(x, LogicalForm("answer(river)", 1));
        CHECK(own > -0.05);
        CHECK(own <= 0.0);
        CHECK(other < -3.0);
        CHECK(evaluate_accuracy(p, two_lf_toy()) == doctest::Approx(1.0));
    }

    TEST_CASE("posterior is normalized") {
        auto p = SurrogateParser::train(two_lf_toy());
        for (TokenSeq x : {TokenSeq{"city"}, TokenSeq{"lake", "town"}, TokenSeq{"oov"}}) {
            auto lp = p.log_posterior(x);
            double s = 0.0;
            for (double v : lp) s += std::exp(v);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }

    TEST_CASE("ties go to the lower template id") {
        std::vector<Example> train{example("1", "same words", "b_lf", 0), example("2", "same words", "a_lf", 1)};
        auto p = SurrogateParser::train(train);
        CHECK(p.labels()[0].template_id == 0);
        CHECK(p.parse(TokenSeq{"same", "words"}).canonical == "b_lf");
    }

    TEST_CASE("out-of-vocabulary input falls back to the prior") {
        std::vector<Example> train{example("1", "a b", "rare", 0), example("2", "c d", "common", 1),
                                   example("3", "c d", "common", 1), example("4", "c d", "common", 1)};
        auto p = SurrogateParser::train(train, NGramConfig{1e4, 0.5});
        CHECK(p.parse(TokenSeq{"zz", "yy"}).canonical == "common");
    }

    TEST_CASE("retraining is deterministic") {
        auto a = SurrogateParser::train(two_lf_toy());
        auto b = SurrogateParser::train(two_lf_toy());
        TokenSeq x{"lake", "city", "oov"};
        CHECK(a.log_posterior(x) == b.log_posterior(x));
    }

    TEST_CASE("accuracy counts exact matches") {
        auto p = SurrogateParser::train(two_lf_toy());
        std::vector<Example> half{example("t1", "city", "answer(city)", 0), example("t2", "city", "answer(river)", 1)};
        CHECK(evaluate_accuracy(p, half) == doctest::Approx(0.5));
        CHECK_THROWS_AS(evaluate_accuracy(p, std::vector<Example>{}), Error);
        CHECK_THROWS_AS(SurrogateParser::train(std::vector<Example>{}), Error);
    }

    TEST_CASE("perplexity") {
        std::vector<Example> one{example("1", "a", "x", 0)};
        auto certain = SurrogateParser::train(one, NGramConfig{1e-12, 1.0});
        CHECK(certain.perplexity(TokenSeq{"a"}, LogicalForm("x", 0)) == doctest::Approx(1.0).epsilon(1e-9));

        auto p = SurrogateParser::train(two_lf_toy());
        LogicalForm city("answer(city)", 0);
        const auto& lm = p.class_model(city);
        TokenSeq x{"city", "town"};
        CHECK(p.perplexity(x, city) == doctest::Approx(std::exp(-lm.loglik(x) / 3.0)));
        TokenSeq y{"town", "lake"};
        CHECK((lm.loglik(x) > lm.loglik(y)) == (p.perplexity(x, city) < p.perplexity(y, city)));
        CHECK(p.perplexity(y, city) >= 1.0);
    }

    TEST_CASE("adding examples of an LF does not lower their likelihood") {
        auto base = two_lf_toy();
        auto p0 = SurrogateParser::train(base);
        auto added = example("5", "stadt ort", "answer(city)", 0, Origin::human_translated);
        auto extended = base;
        extended.push_back(added);
        auto p1 = SurrogateParser::train(extended);
        LogicalForm city("answer(city)", 0);
        CHECK(p1.class_model(city).loglik(added.utterance.tokens) >= p0.class_model(city).loglik(added.utterance.tokens));
    }
}
