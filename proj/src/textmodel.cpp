#include "hat/textmodel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hat/error.hpp"

namespace hat {

NGramLM NGramLM::train(std::span<const TokenSeq> corpus, const NGramConfig& config,
                       const std::vector<std::string>* vocab) {
    if (corpus.empty()) throw Error(ErrorCode::training, "empty corpus");
    if (!(config.add_k > 0.0) || !std::isfinite(config.add_k))
        throw Error(ErrorCode::parameter, "add_k must be positive");
    if (!(config.interpolation >= 0.0 && config.interpolation <= 1.0))
        throw Error(ErrorCode::parameter, "interpolation weight must lie in [0, 1]");

    NGramLM lm;
    lm.config_ = config;
    if (vocab) {
        std::set<std::string> uniq(vocab->begin(), vocab->end());
        lm.vocab_.assign(uniq.begin(), uniq.end());
    } else {
        std::set<std::string> uniq;
        for (const auto& s : corpus) uniq.insert(s.begin(), s.end());
        lm.vocab_.assign(uniq.begin(), uniq.end());
    }
    for (Id i = 0; i < lm.vocab_.size(); ++i) lm.index_.emplace(lm.vocab_[i], i);
    lm.unigram_.assign(lm.vocab_.size() + 2, 0);
    lm.history_.assign(lm.vocab_.size() + 3, 0);

    for (const auto& sentence : corpus) {
        Id prev = lm.bos();
        for (const auto& tok : sentence) {
            Id id = lm.id_of(tok);
            ++lm.unigram_[id];
            ++lm.total_tokens_;
            ++lm.history_[prev];
            ++lm.bigram_[key(prev, id)];
            prev = id;
        }
        ++lm.history_[prev];
        ++lm.bigram_[key(prev, lm.eos())];
    }
    return lm;
}

NGramLM::Id NGramLM::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk() : it->second;
}

const std::string& NGramLM::token_of(Id id) const {
    static const std::string kUnk = "<unk>";
    static const std::string kEos = "</s>";
    static const std::string kBos = "<s>";
    if (id < vocab_.size()) return vocab_[id];
    if (id == unk()) return kUnk;
    if (id == eos()) return kEos;
    return kBos;
}

std::uint64_t NGramLM::bigram_count(Id history, Id next) const {
    auto it = bigram_.find(key(history, next));
    return it == bigram_.end() ? 0 : it->second;
}

double NGramLM::prob(Id next, Id history) const {
    const double k = config_.add_k;
    const double events = static_cast<double>(event_count());
    const double lambda = config_.interpolation;
    double bigram = (static_cast<double>(bigram_count(history, next)) + k) /
                    (static_cast<double>(history_[history]) + k * events);
    double unigram = (static_cast<double>(unigram_[next]) + k) / (static_cast<double>(total_tokens_) + k * events);
    return lambda * bigram + (1.0 - lambda) * unigram;
}

double NGramLM::log_prob(Id next, Id history) const { return std::log(prob(next, history)); }

double NGramLM::loglik_ids(std::span<const Id> ids) const {
    double ll = 0.0;
    Id prev = bos();
    for (Id id : ids) {
        ll += log_prob(id, prev);
        prev = id;
    }
    return ll + log_prob(eos(), prev);
}

double NGramLM::loglik(std::span<const std::string> tokens) const {
    std::vector<Id> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return loglik_ids(ids);
}

json NGramLM::to_json() const {
    json uni = json::object();
    for (Id i = 0; i < unigram_.size(); ++i)
        if (unigram_[i]) uni[token_of(i)] = unigram_[i];
    std::map<std::string, std::uint64_t> bi;
    for (const auto& [k, c] : bigram_) {
        auto h = static_cast<Id>(k >> 32);
        auto w = static_cast<Id>(k & 0xffffffffu);
        bi[token_of(h) + " " + token_of(w)] = c;
    }
    return json{{"vocab", vocab_},
                {"add_k", config_.add_k},
                {"interpolation", config_.interpolation},
                {"total_tokens", total_tokens_},
                {"unigram", uni},
                {"bigram", bi}};
}

namespace {

struct Partial {
    std::vector<NGramLM::Id> ids;
    double logprob;
};

bool better(double lp_a, const std::vector<NGramLM::Id>& a, double lp_b, const std::vector<NGramLM::Id>& b) {
    if (lp_a != lp_b) return lp_a > lp_b;
    return a < b;
}

}  // namespace

std::vector<BeamHypothesis> beam_nbest(const NGramLM& model, std::size_t beam_width, std::size_t n,
                                       std::size_t max_len) {
    if (n < 1 || beam_width < n) throw Error(ErrorCode::parameter, "beam_nbest requires beam_width >= n >= 1");
    if (max_len < 1) throw Error(ErrorCode::parameter, "max_len must be positive");

    const auto vocab = static_cast<NGramLM::Id>(model.vocab_size());
    std::map<std::vector<NGramLM::Id>, double> finished;  // distinct sequences
    std::vector<Partial> beams{{{}, 0.0}};

    auto nth_finished = [&]() {
        std::vector<double> lps;
        lps.reserve(finished.size());
        for (const auto& [ids, lp] : finished) lps.push_back(lp);
        std::nth_element(lps.begin(), lps.begin() + static_cast<std::ptrdiff_t>(n - 1), lps.end(),
                         std::greater<>());
        return lps[n - 1];
    };

    for (std::size_t len = 0; len <= max_len && !beams.empty(); ++len) {
        std::vector<Partial> next;
        for (const auto& p : beams) {
            NGramLM::Id h = p.ids.empty() ? model.bos() : p.ids.back();
            if (!p.ids.empty()) {
                double lp = p.logprob + model.log_prob(model.eos(), h);
                auto [it, inserted] = finished.emplace(p.ids, lp);
                if (!inserted) it->second = std::max(it->second, lp);
            }
            if (len == max_len) continue;
            for (NGramLM::Id w = 0; w < vocab; ++w) {
                Partial q{p.ids, p.logprob + model.log_prob(w, h)};
                q.ids.push_back(w);
                next.push_back(std::move(q));
            }
        }
        std::sort(next.begin(), next.end(),
                  [](const Partial& a, const Partial& b) { return better(a.logprob, a.ids, b.logprob, b.ids); });
        if (next.size() > beam_width) next.resize(beam_width);
        beams = std::move(next);
        // Extensions only lower the logprob, so once n finished hypotheses beat
        // every live prefix the top-n is settled.
        if (finished.size() >= n && !beams.empty() && beams.front().logprob <= nth_finished()) break;
    }
    if (finished.empty()) throw Error(ErrorCode::decode, "no hypothesis completed within max_len");

    std::vector<std::pair<std::vector<NGramLM::Id>, double>> ranked(finished.begin(), finished.end());
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) { return better(a.second, a.first, b.second, b.first); });
    if (ranked.size() > n) ranked.resize(n);
    std::vector<BeamHypothesis> out;
    out.reserve(ranked.size());
    for (const auto& [ids, lp] : ranked) {
        BeamHypothesis h;
        h.logprob = lp;
        for (auto id : ids) h.tokens.push_back(model.token_of(id));
        out.push_back(std::move(h));
    }
    return out;
}

std::vector<double> renormalize_nbest(std::span<const BeamHypothesis> hyps) {
    if (hyps.empty()) throw Error(ErrorCode::decode, "empty N-best list");
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& h : hyps) mx = std::max(mx, h.logprob);
    std::vector<double> p;
    p.reserve(hyps.size());
    double z = 0.0;
    for (const auto& h : hyps) {
        p.push_back(std::exp(h.logprob - mx));
        z += p.back();
    }
    for (double& v : p) v /= z;
    return p;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

FeatureVector hash_embed(std::span<const std::string> tokens, std::size_t dimension) {
    if (tokens.empty()) throw Error(ErrorCode::invalid_argument, "hash_embed of an empty token sequence");
    if (dimension == 0) throw Error(ErrorCode::parameter, "feature dimension must be positive");
    std::vector<double> v(dimension, 0.0);
    const double per_token = 1.0 / static_cast<double>(tokens.size());
    for (const auto& tok : tokens) {
        std::string padded = "#" + tok + "#";
        std::size_t trigrams = padded.size() - 2;
        double w = per_token / static_cast<double>(trigrams);
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
            std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3));
            double sign = (h >> 63) ? -1.0 : 1.0;
            v[h % dimension] += sign * w;
        }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw Error(ErrorCode::invalid_argument, "hash_embed produced a zero vector");
    for (double& x : v) x /= norm;
    return FeatureVector(std::move(v));
}

bool ConditionalTranslationModel::covers(const std::string& source_id) const {
    if (factorization_ == Factorization::per_source) return per_source_.count(source_id) > 0;
    auto it = lf_of_source_.find(source_id);
    return it != lf_of_source_.end() && per_lf_.count(it->second) > 0;
}

int ConditionalTranslationModel::lf_of_source(const std::string& source_id) const {
    auto it = lf_of_source_.find(source_id);
    if (it == lf_of_source_.end()) throw Error(ErrorCode::not_found, "source '" + source_id + "' not in pool");
    return it->second;
}

const NGramLM& ConditionalTranslationModel::model_for_lf(int template_id) const {
    auto it = per_lf_.find(template_id);
    if (it == per_lf_.end())
        throw Error(ErrorCode::not_found, "no translation model for LF " + std::to_string(template_id));
    return it->second;
}

const NGramLM& ConditionalTranslationModel::model_for_source(const std::string& source_id) const {
    if (factorization_ == Factorization::per_source) {
        auto it = per_source_.find(source_id);
        if (it == per_source_.end())
            throw Error(ErrorCode::not_found, "no translation model for source '" + source_id + "'");
        return it->second;
    }
    return model_for_lf(lf_of_source(source_id));
}

std::string ConditionalTranslationModel::model_key(const std::string& source_id) const {
    if (factorization_ == Factorization::per_source) return "s:" + source_id;
    return "lf:" + std::to_string(lf_of_source(source_id));
}

json ConditionalTranslationModel::to_json() const {
    json per_lf = json::object();
    for (const auto& [id, lm] : per_lf_) per_lf[std::to_string(id)] = lm.to_json();
    json per_source = json::object();
    for (const auto& [id, lm] : per_source_) per_source[id] = lm.to_json();
    return json{{"factorization", factorization_ == Factorization::by_lf ? "by_lf" : "per_source"},
                {"per_lf", per_lf},
                {"per_source", per_source},
                {"warnings", warnings_}};
}

ConditionalTranslationModel distill_translation_model(std::span<const TranslationPair> pairs,
                                                      std::span<const Example> source_pool,
                                                      const DistillConfig& config) {
    if (pairs.empty()) throw Error(ErrorCode::training, "no translation pairs to distill");
    ConditionalTranslationModel model;
    model.factorization_ = config.factorization;

    std::map<int, std::vector<TokenSeq>> by_lf;
    std::map<std::string, std::vector<TokenSeq>> by_source;
    for (const auto& p : pairs) {
        if (!(p.source.lf == p.target.lf))
            throw Error(ErrorCode::training, "pair '" + p.source.utterance.id + "' / '" + p.target.utterance.id +
                                                 "' does not share an LF");
        by_lf[p.source.lf.template_id].push_back(p.target.utterance.tokens);
        by_source[p.source.utterance.id].push_back(p.target.utterance.tokens);
        model.lf_of_source_[p.source.utterance.id] = p.source.lf.template_id;
    }
    if (config.factorization == Factorization::by_lf) {
        for (const auto& [lf, corpus] : by_lf) model.per_lf_.emplace(lf, NGramLM::train(corpus, config.lm));
    } else {
        for (const auto& [id, corpus] : by_source) model.per_source_.emplace(id, NGramLM::train(corpus, config.lm));
    }

    std::set<int> warned;
    for (const auto& e : source_pool) {
        model.lf_of_source_[e.utterance.id] = e.lf.template_id;
        if (config.factorization == Factorization::by_lf && !model.per_lf_.count(e.lf.template_id) &&
            warned.insert(e.lf.template_id).second) {
            model.warnings_.push_back("LF " + std::to_string(e.lf.template_id) + " (" + e.lf.canonical +
                                      ") has no translation pairs; excluded");
        }
    }
    return model;
}

std::vector<TranslationPair> training_pairs(const DatasetBundle& bundle) {
    std::unordered_map<std::string, const Example*> source_by_id;
    for (const auto& e : bundle.d_source) source_by_id.emplace(e.utterance.id, &e);
    std::unordered_map<std::string, const Example*> mt_by_id;
    for (const auto& e : bundle.d_mt) mt_by_id.emplace(e.utterance.id, &e);

    std::vector<TranslationPair> out;
    out.reserve(bundle.d_source.size() + bundle.d_ht.size());
    for (const auto& src : bundle.d_source) {
        auto a = bundle.alignment.find(src.utterance.id);
        if (a == bundle.alignment.end()) continue;
        auto m = mt_by_id.find(a->second);
        if (m == mt_by_id.end()) continue;
        out.push_back({src, *m->second});
    }
    for (const auto& ht : bundle.d_ht) {
        auto s = source_by_id.find(ht.utterance.id);
        if (s == source_by_id.end())
            throw Error(ErrorCode::integrity, "HT '" + ht.utterance.id + "' has no source utterance");
        out.push_back({*s->second, ht});
    }
    return out;
}

}  // namespace hat
