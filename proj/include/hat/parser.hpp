#pragma once

#include <span>
#include <vector>

#include "hat/core.hpp"
#include "hat/textmodel.hpp"

namespace hat {

/// Generative Bayes classifier over LFs: one n-gram LM per LF trained on every
/// utterance (any language) labelled with it, plus the empirical LF prior.
/// All class models share one vocabulary so their likelihoods are comparable.
class SurrogateParser {
public:
    static SurrogateParser train(std::span<const Example> training, const NGramConfig& config = {});

    std::size_t num_classes() const { return labels_.size(); }
    const std::vector<LogicalForm>& labels() const { return labels_; }
    const std::vector<double>& prior() const { return prior_; }
    const NGramLM& class_model(const LogicalForm& lf) const;

    /// Log posterior of every class, in labels() order (ascending template id).
    std::vector<double> log_posterior(std::span<const std::string> tokens) const;

    /// log P(lf | tokens); throws unknown-class for an LF never seen in training.
    double loglik(std::span<const std::string> tokens, const LogicalForm& lf) const;

    /// argmax posterior; ties go to the lower template id.
    const LogicalForm& parse(std::span<const std::string> tokens) const;

    /// exp(-log P(tokens | lf) / (|tokens| + 1)) under the LF's class model.
    double perplexity(std::span<const std::string> tokens, const LogicalForm& lf) const;

private:
    std::size_t class_index(const LogicalForm& lf) const;

    std::vector<LogicalForm> labels_;
    std::vector<double> prior_;
    std::vector<NGramLM> models_;
};

inline double parser_loglik(const SurrogateParser& parser, const Utterance& utterance, const LogicalForm& lf) {
    return parser.loglik(utterance.tokens, lf);
}

inline const LogicalForm& parse(const SurrogateParser& parser, const Utterance& utterance) {
    return parser.parse(utterance.tokens);
}

/// Fraction of exact canonical-string matches; throws evaluation error on an empty set.
double evaluate_accuracy(const SurrogateParser& parser, std::span<const Example> test);

}  // namespace hat
