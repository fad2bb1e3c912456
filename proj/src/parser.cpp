#include "hat/parser.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "hat/error.hpp"

namespace hat {

SurrogateParser SurrogateParser::train(std::span<const Example> training, const NGramConfig& config) {
    if (training.empty()) throw Error(ErrorCode::training, "parser training set is empty");

    // Order classes by template id, then canonical string for unassigned ids.
    std::map<std::pair<int, std::string>, std::vector<TokenSeq>> corpora;
    std::set<std::string> vocab_set;
    for (const auto& e : training) {
        corpora[{e.lf.template_id, e.lf.canonical}].push_back(e.utterance.tokens);
        vocab_set.insert(e.utterance.tokens.begin(), e.utterance.tokens.end());
    }
    std::vector<std::string> vocab(vocab_set.begin(), vocab_set.end());

    SurrogateParser p;
    for (const auto& [key, corpus] : corpora) {
        p.labels_.emplace_back(key.second, key.first);
        p.prior_.push_back(static_cast<double>(corpus.size()) / static_cast<double>(training.size()));
        p.models_.push_back(NGramLM::train(corpus, config, &vocab));
    }
    return p;
}

std::size_t SurrogateParser::class_index(const LogicalForm& lf) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == lf) return i;
    throw Error(ErrorCode::unknown_class, "LF '" + lf.canonical + "' unknown to the parser");
}

const NGramLM& SurrogateParser::class_model(const LogicalForm& lf) const { return models_[class_index(lf)]; }

std::vector<double> SurrogateParser::log_posterior(std::span<const std::string> tokens) const {
    std::vector<NGramLM::Id> ids;
    ids.reserve(tokens.size());
    // Shared vocabulary: ids are identical across class models.
    for (const auto& t : tokens) ids.push_back(models_.front().id_of(t));

    std::vector<double> joint(models_.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < models_.size(); ++c) {
        joint[c] = models_[c].loglik_ids(ids) + std::log(prior_[c]);
        mx = std::max(mx, joint[c]);
    }
    double z = 0.0;
    for (double v : joint) z += std::exp(v - mx);
    double log_z = mx + std::log(z);
    for (double& v : joint) v = std::min(0.0, v - log_z);
    return joint;
}

double SurrogateParser::loglik(std::span<const std::string> tokens, const LogicalForm& lf) const {
    std::size_t c = class_index(lf);
    return log_posterior(tokens)[c];
}

const LogicalForm& SurrogateParser::parse(std::span<const std::string> tokens) const {
    auto post = log_posterior(tokens);
    std::size_t best = 0;
    for (std::size_t c = 1; c < post.size(); ++c)
        if (post[c] > post[best]) best = c;
    return labels_[best];
}

double SurrogateParser::perplexity(std::span<const std::string> tokens, const LogicalForm& lf) const {
    const NGramLM& lm = class_model(lf);
    double ll = lm.loglik(tokens);
    return std::exp(-ll / static_cast<double>(tokens.size() + 1));
}

double evaluate_accuracy(const SurrogateParser& parser, std::span<const Example> test) {
    if (test.empty()) throw Error(ErrorCode::evaluation, "empty test set");
    std::size_t correct = 0;
    for (const auto& e : test)
        if (parser.parse(e.utterance.tokens) == e.lf) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace hat
