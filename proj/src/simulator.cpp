#include "hat/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hat/error.hpp"
#include "hat/textmodel.hpp"

namespace hat {

namespace {

constexpr double kHtFloor = 1e-6;
constexpr std::string_view kUnknownToken = "unk";

// Source and target words use disjoint consonant sets, so the two
// vocabularies never overlap.
constexpr std::string_view kSourceConsonants = "bdfgklmnprstv";
constexpr std::string_view kTargetConsonants = "chjqwxyz";
constexpr std::string_view kVowels = "aeiou";

std::string make_word(Rng& rng, std::string_view consonants) {
    std::string w;
    for (int s = 0; s < 3; ++s) {
        w += consonants[uniform_index(rng, consonants.size())];
        w += kVowels[uniform_index(rng, kVowels.size())];
    }
    return w;
}

std::vector<std::string> make_words(Rng& rng, std::string_view consonants, std::size_t count,
                                    std::set<std::string>& taken) {
    std::vector<std::string> out;
    out.reserve(count);
    while (out.size() < count) {
        std::string w = make_word(rng, consonants);
        if (taken.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

// First k entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    idx.resize(k);
    return idx;
}

std::vector<double> softmax_neg(std::span<const double> energy, double temperature) {
    std::vector<double> p(energy.size(), 0.0);
    if (!(temperature > 0.0)) {
        p[std::min_element(energy.begin(), energy.end()) - energy.begin()] = 1.0;
        return p;
    }
    double lo = *std::min_element(energy.begin(), energy.end());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(-(energy[i] - lo) / temperature);
    for (auto& v : p) v /= z;
    return p;
}

std::string id_for(std::string_view prefix, std::size_t i, std::size_t total) {
    std::size_t width = std::max<std::size_t>(4, std::to_string(total).size());
    return fmt::format("{}{:0{}}", prefix, i, width);
}

Utterance utterance_from_tokens(std::string id, std::string_view language, const TokenSeq& tokens) {
    return make_utterance(std::move(id), std::string(language), join_tokens(tokens));
}

void check_mixture_args(std::span<const double> p_ht, std::span<const double> p_mt, double lambda) {
    if (p_ht.size() != p_mt.size() || p_ht.empty())
        throw Error(ErrorCode::invalid_argument, "distributions must be non-empty and of equal size");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::range, "lambda must lie in [0, 1]");
}

}  // namespace

void WorldConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::configuration, m); };
    if (n_lfs == 0) fail("n_lfs must be positive");
    if (paraphrases_per_lf_source == 0 || paraphrases_per_lf_target == 0) fail("paraphrase counts must be positive");
    for (auto [name, v] : {std::pair{"bias", bias}, {"error", error}, {"bt_error", bt_error}})
        if (!(v >= 0.0 && v <= 1.0)) fail(fmt::format("{} must lie in [0, 1]", name));
    if (!(ht_temperature >= 0.0) || !std::isfinite(ht_temperature)) fail("ht_temperature must be finite and >= 0");
    if (mt_preferred >= paraphrases_per_lf_target) fail("mt_preferred must index a target bank item");
    if (pool_size < n_lfs) fail("pool_size must be at least n_lfs");
    if (test_size == 0) fail("test_size must be positive");
    if (source_frames < paraphrases_per_lf_source) fail("source_frames must cover paraphrases_per_lf_source");
    if (target_frames < paraphrases_per_lf_target) fail("target_frames must cover paraphrases_per_lf_target");
    if (n_lfs < 2 && (error > 0.0 || bt_error > 0.0)) fail("error rates above 0 need at least two LFs");
    if (static_cast<double>(n_lfs * paraphrases_per_lf_target) * kHtFloor >= 0.5) fail("target bank too large");
}

json world_config_to_json(const WorldConfig& c) {
    return json{{"n_lfs", c.n_lfs},
                {"paraphrases_per_lf_source", c.paraphrases_per_lf_source},
                {"paraphrases_per_lf_target", c.paraphrases_per_lf_target},
                {"bias", c.bias},
                {"error", c.error},
                {"bt_error", c.bt_error},
                {"ht_temperature", c.ht_temperature},
                {"mt_preferred", c.mt_preferred},
                {"pool_size", c.pool_size},
                {"test_size", c.test_size},
                {"source_frames", c.source_frames},
                {"target_frames", c.target_frames},
                {"seed", c.seed}};
}

WorldConfig world_config_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::configuration, "world config must be a JSON object");
    WorldConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "n_lfs") c.n_lfs = value.get<std::size_t>();
            else if (key == "paraphrases_per_lf_source") c.paraphrases_per_lf_source = value.get<std::size_t>();
            else if (key == "paraphrases_per_lf_target") c.paraphrases_per_lf_target = value.get<std::size_t>();
            else if (key == "bias") c.bias = value.get<double>();
            else if (key == "error") c.error = value.get<double>();
            else if (key == "bt_error") c.bt_error = value.get<double>();
            else if (key == "ht_temperature") c.ht_temperature = value.get<double>();
            else if (key == "mt_preferred") c.mt_preferred = value.get<std::size_t>();
            else if (key == "pool_size") c.pool_size = value.get<std::size_t>();
            else if (key == "test_size") c.test_size = value.get<std::size_t>();
            else if (key == "source_frames") c.source_frames = value.get<std::size_t>();
            else if (key == "target_frames") c.target_frames = value.get<std::size_t>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw Error(ErrorCode::configuration, "unknown world config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::configuration, std::string("bad world config value: ") + e.what());
    }
    c.validate();
    return c;
}

WorldConfig load_world_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::configuration, "cannot parse '" + path.string() + "': " + e.what());
    }
    return world_config_from_json(j);
}

struct WorldBuilder {
    static World build(const WorldConfig& cfg);
};

World WorldBuilder::build(const WorldConfig& cfg) {
    cfg.validate();
    const std::size_t L = cfg.n_lfs, ps = cfg.paraphrases_per_lf_source, m = cfg.paraphrases_per_lf_target;
    Rng rng = derive_rng(cfg.seed, 0x776f726c64);

    std::set<std::string> taken;
    const std::size_t n_preds = std::max<std::size_t>(1, L / 5);
    auto preds = make_words(rng, kSourceConsonants, n_preds, taken);
    auto ents = make_words(rng, kSourceConsonants, L, taken);
    auto src_frame_words = make_words(rng, kSourceConsonants, 2 * cfg.source_frames, taken);
    auto tgt_frame_words = make_words(rng, kTargetConsonants, 2 * cfg.target_frames, taken);
    auto keywords = make_words(rng, kTargetConsonants, L * m, taken);

    // LFs sorted by canonical string so the index equals the assigned template id.
    struct Proto {
        std::string canonical, pred, ent;
    };
    std::vector<Proto> protos;
    for (std::size_t j = 0; j < L; ++j)
        protos.push_back({fmt::format("answer({}({}))", preds[j % n_preds], ents[j]), preds[j % n_preds], ents[j]});
    std::sort(protos.begin(), protos.end(), [](const Proto& a, const Proto& b) { return a.canonical < b.canonical; });

    Oracles o;
    o.config_ = cfg;
    for (std::size_t k = 0; k < L; ++k) {
        o.lfs_.emplace_back(protos[k].canonical, static_cast<int>(k));
        o.lf_by_canonical_[protos[k].canonical] = k;
        o.pred_word_.push_back(protos[k].pred);
        o.entity_word_.push_back(protos[k].ent);
        o.source_entity_[protos[k].ent] = k;
    }
    for (std::size_t f = 0; f < cfg.target_frames; ++f) {
        std::size_t sf = f % cfg.source_frames;
        o.frame_lexicon_[tgt_frame_words[2 * f]] = src_frame_words[2 * sf];
        o.frame_lexicon_[tgt_frame_words[2 * f + 1]] = src_frame_words[2 * sf + 1];
    }
    for (std::size_t k = 0; k < L; ++k) {
        for (std::size_t f : sample_without_replacement(rng, cfg.source_frames, ps))
            o.source_bank_.push_back({src_frame_words[2 * f], src_frame_words[2 * f + 1], o.pred_word_[k], o.entity_word_[k]});
        auto frames = sample_without_replacement(rng, cfg.target_frames, m);
        for (std::size_t i = 0; i < m; ++i) {
            const std::string& kw = keywords[k * m + i];
            o.bank_.push_back({tgt_frame_words[2 * frames[i]], tgt_frame_words[2 * frames[i] + 1], kw});
            o.target_keyword_[kw] = k * m + i;
        }
    }

    // Per-LF conditionals over bank items.
    std::vector<double> ht_energy(m), mt_energy(m);
    for (std::size_t i = 0; i < m; ++i) {
        ht_energy[i] = static_cast<double>(i);
        std::size_t rank = i == cfg.mt_preferred ? 0 : (i < cfg.mt_preferred ? i + 1 : i);
        mt_energy[i] = static_cast<double>(rank);
    }
    o.ht_conditional_ = softmax_neg(ht_energy, cfg.ht_temperature);
    o.mt_conditional_ = softmax_neg(mt_energy, 1.0 - cfg.bias);

    const std::size_t G = L * m;
    for (std::size_t k = 0; k < L; ++k) {
        std::vector<double> ht(G, kHtFloor), mt(G, 0.0);
        const double own = 1.0 - static_cast<double>(G) * kHtFloor;
        for (std::size_t i = 0; i < m; ++i) ht[k * m + i] += own * o.ht_conditional_[i];
        for (std::size_t j = 0; j < L; ++j) {
            double w = j == k ? 1.0 - cfg.error : cfg.error / static_cast<double>(L - 1);
            if (w == 0.0) continue;
            for (std::size_t i = 0; i < m; ++i) mt[j * m + i] += w * o.mt_conditional_[i];
        }
        o.p_ht_.push_back(std::move(ht));
        o.p_mt_.push_back(std::move(mt));
    }

    World world;
    DatasetBundle& b = world.bundle;
    std::vector<std::pair<std::size_t, std::size_t>> slots;  // (lf, paraphrase)
    for (std::size_t k = 0; k < L; ++k) {
        std::size_t count = cfg.pool_size / L + (k < cfg.pool_size % L ? 1 : 0);
        for (std::size_t c = 0; c < count; ++c) slots.emplace_back(k, c % ps);
    }
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[uniform_index(rng, i)]);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto [k, p] = slots[i];
        Example s{utterance_from_tokens(id_for("s", i, slots.size()), kSourceLanguage, o.source_bank_[k * ps + p]),
                  o.lfs_[k], Origin::source};
        Utterance t = o.mt(s.utterance);
        t.id = id_for("m", i, slots.size());
        b.alignment[s.utterance.id] = t.id;
        b.d_mt.push_back(Example{std::move(t), o.lfs_[k], Origin::machine_translated});
        b.d_source.push_back(std::move(s));
    }

    Rng test_rng = derive_rng(cfg.seed, 0x74657374);
    for (std::size_t i = 0; i < cfg.test_size; ++i) {
        std::size_t k = uniform_index(test_rng, L);
        std::size_t p = uniform_index(test_rng, ps);
        b.test_source.push_back(
            Example{utterance_from_tokens(id_for("ts", i, cfg.test_size), kSourceLanguage, o.source_bank_[k * ps + p]),
                    o.lfs_[k], Origin::source});
        Utterance t = o.ht(k, test_rng);
        t.id = id_for("tt", i, cfg.test_size);
        b.test_target.push_back(Example{std::move(t), o.lfs_[k], Origin::human_translated});
    }
    assign_template_ids(b);
    b.validate();
    world.oracles = std::move(o);
    return world;
}

World generate_world(const WorldConfig& config) { return WorldBuilder::build(config); }

std::size_t Oracles::lf_index(const LogicalForm& lf) const {
    auto it = lf_by_canonical_.find(lf.canonical);
    if (it == lf_by_canonical_.end()) throw Error(ErrorCode::unknown_class, "LF '" + lf.canonical + "' not in world");
    return it->second;
}

int Oracles::realized_source_lf(std::span<const std::string> tokens) const {
    for (const auto& t : tokens)
        if (auto it = source_entity_.find(t); it != source_entity_.end()) return static_cast<int>(it->second);
    return -1;
}

int Oracles::realized_target_lf(std::span<const std::string> tokens) const {
    const std::size_t m = config_.paraphrases_per_lf_target;
    for (const auto& t : tokens)
        if (auto it = target_keyword_.find(t); it != target_keyword_.end()) return static_cast<int>(it->second / m);
    return -1;
}

Utterance Oracles::mt(const Utterance& source) const {
    int k = realized_source_lf(source.tokens);
    if (k < 0) throw Error(ErrorCode::validation, "source utterance '" + source.id + "' realizes no world LF");
    Rng rng = derive_rng(config_.seed, fnv1a64("mt:" + source.id + ":" + source.raw));
    std::size_t lf = static_cast<std::size_t>(k);
    if (uniform01(rng) < config_.error) {
        std::size_t other = uniform_index(rng, lfs_.size() - 1);
        lf = other >= lf ? other + 1 : other;
    }
    std::size_t item = sample_categorical(rng, mt_conditional_);
    const std::size_t m = config_.paraphrases_per_lf_target;
    return utterance_from_tokens(source.id, kTargetLanguage, bank_[lf * m + item]);
}

Utterance Oracles::ht(std::size_t lf_index, Rng& rng) const {
    if (lf_index >= lfs_.size()) throw Error(ErrorCode::range, "LF index out of range");
    std::size_t item = sample_categorical(rng, ht_conditional_);
    return utterance_from_tokens("", kTargetLanguage, bank_[lf_index * config_.paraphrases_per_lf_target + item]);
}

Utterance Oracles::bt(const Utterance& target) const {
    const std::size_t m = config_.paraphrases_per_lf_target;
    Rng rng = derive_rng(config_.seed, fnv1a64("bt:" + join_tokens(target.tokens)));
    const bool flip = uniform01(rng) < config_.bt_error;
    TokenSeq out;
    std::size_t unknown = 0;
    for (const auto& t : target.tokens) {
        if (auto f = frame_lexicon_.find(t); f != frame_lexicon_.end()) {
            out.push_back(f->second);
        } else if (auto kw = target_keyword_.find(t); kw != target_keyword_.end()) {
            std::size_t lf = kw->second / m;
            if (flip) {
                std::size_t other = uniform_index(rng, lfs_.size() - 1);
                lf = other >= lf ? other + 1 : other;
            }
            out.push_back(pred_word_[lf]);
            out.push_back(entity_word_[lf]);
        } else {
            out.emplace_back(kUnknownToken);
            ++unknown;
        }
    }
    if (out.empty()) out.emplace_back(kUnknownToken);
    if (unknown > 0) spdlog::debug("back-translation of '{}' substituted {} unknown token(s)", target.raw, unknown);
    return utterance_from_tokens(target.id, kSourceLanguage, out);
}

Example simulated_ht(const Oracles& oracles, const Example& source, Rng& rng) {
    Utterance t = oracles.ht(oracles.lf_index(source.lf), rng);
    t.id = source.utterance.id;
    return Example{std::move(t), source.lf, Origin::human_translated};
}

double mixture_entropy(std::span<const double> p_ht, std::span<const double> p_mt, double lambda) {
    check_mixture_args(p_ht, p_mt, lambda);
    double h = 0.0;
    for (std::size_t i = 0; i < p_ht.size(); ++i) {
        double p = lambda * p_ht[i] + (1.0 - lambda) * p_mt[i];
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::max(0.0, h);
}

double mixture_kl(std::span<const double> p_ht, std::span<const double> p_mt, double lambda) {
    check_mixture_args(p_ht, p_mt, lambda);
    double kl = 0.0;
    for (std::size_t i = 0; i < p_ht.size(); ++i) {
        double p = lambda * p_ht[i] + (1.0 - lambda) * p_mt[i];
        if (p <= 0.0) continue;
        if (!(p_ht[i] > 0.0))
            throw Error(ErrorCode::measure, fmt::format("mixture has mass {} at index {} outside the HT support", p, i));
        kl += p * std::log(p / p_ht[i]);
    }
    return std::max(0.0, kl);
}

double true_conditional_entropy(const Oracles& oracles, std::size_t lf_index, double lambda) {
    return mixture_entropy(oracles.p_ht(lf_index), oracles.p_mt(lf_index), lambda);
}

double kl_to_component(const Oracles& oracles, std::size_t lf_index, double lambda) {
    return mixture_kl(oracles.p_ht(lf_index), oracles.p_mt(lf_index), lambda);
}

}  // namespace hat
