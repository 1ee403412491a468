#include "darb/probes.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace darb {

std::string_view to_string(Pooling p) noexcept { return p == Pooling::Max ? "max" : "mean"; }

Pooling parse_pooling(std::string_view text) {
    if (text == "max") return Pooling::Max;
    if (text == "mean") return Pooling::Mean;
    throw ValidationError("unknown pooling '" + std::string(text) + "' (expected max or mean)");
}

namespace {

const char* const kPhraseSlot = "{phrase}";

const std::vector<std::string>& default_stopwords() {
    static const std::vector<std::string> words = {
        "a",      "about", "above", "after",   "again", "against", "all",   "also",  "am",     "an",
        "and",    "any",   "are",   "around",  "as",    "at",      "be",    "been",  "before", "being",
        "below",  "between", "both", "but",    "by",    "can",     "could", "did",   "do",     "does",
        "doing",  "down",  "during", "each",   "few",   "for",     "from",  "further", "had",  "has",
        "have",   "having", "he",   "her",     "here",  "hers",    "him",   "his",   "how",    "i",
        "if",     "in",    "into",  "is",      "it",    "its",     "itself", "just", "me",     "more",
        "most",   "my",    "near",  "no",      "nor",   "not",     "of",    "off",   "on",     "once",
        "only",   "or",    "other", "our",     "out",   "over",    "own",   "same",  "she",    "should",
        "so",     "some",  "such",  "than",    "that",  "the",     "their", "them",  "then",   "there",
        "these",  "they",  "this",  "those",   "through", "to",    "too",   "under", "until",  "up",
        "very",   "was",   "we",    "were",    "what",  "when",    "where", "which", "while",  "who",
        "whom",   "why",   "will",  "with",    "would", "you",     "your",  "image", "photo",  "shows",
        "visible", "appears", "seen"};
    return words;
}

bool is_numeric(const std::string& token) {
    return !token.empty() && std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string join(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::vector<std::string> normalized_list(const std::vector<std::string>& in) {
    std::vector<std::string> out;
    for (const auto& s : in) {
        auto n = normalize_phrase(s);
        if (!n.empty()) out.push_back(std::move(n));
    }
    return out;
}

std::vector<std::string> string_list(const Json& j, const char* key) {
    std::vector<std::string> out;
    const auto& arr = j.at(key);
    if (!arr.is_array()) throw ValidationError(std::string("probe config: '") + key + "' must be an array");
    for (const auto& v : arr) {
        if (!v.is_string()) throw ValidationError(std::string("probe config: '") + key + "' must hold strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ProbeConfig ProbeConfig::defaults() {
    ProbeConfig c;
    c.anchors[index_of(ProbeDimension::Trees)] = {"tree", "trees", "fallen", "branch", "branches"};
    c.anchors[index_of(ProbeDimension::Debris)] = {"debris", "rubble", "wreckage"};
    c.anchors[index_of(ProbeDimension::Infrastructure)] = {"power", "line", "lines", "pole", "bridge",
                                                           "infrastructure"};
    c.anchors[index_of(ProbeDimension::Flood)] = {"flood", "flooding", "water", "inundated", "submerged"};
    c.stopwords = default_stopwords();
    c.templates = {"a street-view photo showing {phrase}", "a post-disaster street scene with {phrase}",
                   "an image of {phrase} after a hurricane"};
    return c;
}

ProbeConfig ProbeConfig::from_json(const Json& j) {
    ProbeConfig c = defaults();
    if (!j.is_object()) throw ValidationError("probe config must be a JSON object");
    try {
        if (j.contains("anchors")) {
            const auto& a = j.at("anchors");
            for (auto it = a.begin(); it != a.end(); ++it) {
                const auto dim = parse_probe_dimension(it.key());
                c.anchors[index_of(dim)] = string_list(a, it.key().c_str());
            }
        }
        if (j.contains("whitelist")) c.whitelist = string_list(j, "whitelist");
        if (j.contains("blacklist")) c.blacklist = string_list(j, "blacklist");
        if (j.contains("stopwords")) c.stopwords = string_list(j, "stopwords");
        if (j.contains("templates")) c.templates = string_list(j, "templates");
        if (j.contains("top_n")) c.top_n = j.at("top_n").get<std::size_t>();
        if (j.contains("f_min")) c.f_min = j.at("f_min").get<std::size_t>();
        if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
        if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("probe config: ") + e.what());
    }
    c.validate();
    return c;
}

Json ProbeConfig::to_json() const {
    Json j;
    Json a;
    for (auto d : kAllProbeDims) a[std::string(to_string(d))] = anchors[index_of(d)];
    j["anchors"] = std::move(a);
    j["whitelist"] = whitelist;
    j["blacklist"] = blacklist;
    j["stopwords"] = stopwords;
    j["templates"] = templates;
    j["top_n"] = top_n;
    j["f_min"] = f_min;
    j["alpha"] = alpha;
    j["pooling"] = std::string(to_string(pooling));
    return j;
}

void ProbeConfig::validate() const {
    std::map<std::string, ProbeDimension> owner;
    for (auto d : kAllProbeDims) {
        const auto list = normalized_list(anchors[index_of(d)]);
        if (list.empty()) throw ValidationError("probe config: no anchors for " + std::string(to_string(d)));
        for (const auto& a : list) {
            auto [it, fresh] = owner.emplace(a, d);
            if (!fresh && it->second != d) {
                throw ValidationError("probe config: anchor '" + a + "' appears in both " +
                                      std::string(to_string(it->second)) + " and " + std::string(to_string(d)));
            }
        }
    }
    if (!(alpha > 0.0)) throw ValidationError("probe config: alpha must be positive");
    if (top_n == 0) throw ValidationError("probe config: top_n must be positive");
    for (const auto& t : templates) {
        const auto first = t.find(kPhraseSlot);
        if (first == std::string::npos || t.find(kPhraseSlot, first + 1) != std::string::npos) {
            throw ValidationError("template must contain exactly one {phrase} placeholder: '" + t + "'");
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenization and corpus

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c == '\'') continue;
        if (c >= 0x80 || std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string normalize_phrase(std::string_view text) {
    const auto tokens = tokenize(text);
    return join(tokens, 0, tokens.size());
}

Corpus::Corpus(const std::vector<std::string>& captions) {
    docs_.reserve(captions.size());
    grams_.reserve(captions.size());
    for (const auto& c : captions) {
        auto tokens = tokenize(c);
        std::unordered_set<std::string> grams;
        for (std::size_t n = 1; n <= 3; ++n) {
            for (std::size_t i = 0; i + n <= tokens.size(); ++i) grams.insert(join(tokens, i, i + n));
        }
        docs_.push_back(std::move(tokens));
        grams_.push_back(std::move(grams));
    }
}

bool Corpus::contains(std::size_t doc, const std::string& phrase) const {
    return contains_normalized(doc, normalize_phrase(phrase));
}

bool Corpus::contains_normalized(std::size_t doc, const std::string& phrase) const {
    if (phrase.empty()) return false;
    if (std::count(phrase.begin(), phrase.end(), ' ') < 3) return grams_.at(doc).count(phrase) != 0;
    const auto needle = tokenize(phrase);
    const auto& hay = docs_.at(doc);
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

// ---------------------------------------------------------------------------
// Candidates

std::vector<CandidatePhrase> extract_candidates(const std::vector<std::string>& captions, const ProbeConfig& cfg) {
    if (captions.empty()) throw ValidationError("extract_candidates: empty corpus");
    const std::set<std::string> stop(cfg.stopwords.begin(), cfg.stopwords.end());
    const auto black_list = normalized_list(cfg.blacklist);
    const auto white_list = normalized_list(cfg.whitelist);
    const std::set<std::string> black(black_list.begin(), black_list.end());

    std::map<std::string, CandidatePhrase> all;
    for (const auto& caption : captions) {
        const auto tokens = tokenize(caption);
        for (std::size_t n = 1; n <= 3; ++n) {
            for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
                auto text = join(tokens, i, i + n);
                auto& c = all[text];
                if (c.corpus_count == 0) {
                    c.text = std::move(text);
                    c.n = n;
                }
                ++c.corpus_count;
            }
        }
    }

    auto passes_filters = [&](const std::vector<std::string>& tokens) {
        if (stop.count(tokens.front()) || stop.count(tokens.back())) return false;
        return std::none_of(tokens.begin(), tokens.end(), is_numeric);
    };

    std::vector<CandidatePhrase> out;
    std::set<std::string> taken;
    for (const auto& [text, c] : all) {
        if (black.count(text)) continue;
        if (c.corpus_count < cfg.f_min) continue;
        if (!passes_filters(tokenize(text))) continue;
        out.push_back(c);
        taken.insert(text);
    }
    // Whitelisted phrases bypass frequency and stopword rules; longer ones are counted directly.
    for (const auto& w : white_list) {
        if (black.count(w) || taken.count(w)) continue;
        CandidatePhrase c{w, tokenize(w).size(), 0};
        if (auto it = all.find(w); it != all.end()) {
            c.corpus_count = it->second.corpus_count;
        } else if (c.n > 3) {
            const auto needle = tokenize(w);
            for (const auto& caption : captions) {
                const auto hay = tokenize(caption);
                for (auto it2 = hay.begin();
                     (it2 = std::search(it2, hay.end(), needle.begin(), needle.end())) != hay.end(); ++it2) {
                    ++c.corpus_count;
                }
            }
        }
        if (c.corpus_count > 0) {
            out.push_back(std::move(c));
            taken.insert(w);
        }
    }
    std::sort(out.begin(), out.end(), [](const CandidatePhrase& a, const CandidatePhrase& b) {
        if (a.corpus_count != b.corpus_count) return a.corpus_count > b.corpus_count;
        return a.text < b.text;
    });
    return out;
}

std::vector<CandidatePhrase> import_candidates(const std::vector<std::string>& phrases,
                                               const std::vector<std::string>& captions) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(captions.size());
    for (const auto& c : captions) docs.push_back(tokenize(c));
    std::vector<CandidatePhrase> out;
    std::set<std::string> seen;
    for (const auto& p : phrases) {
        const auto needle = tokenize(p);
        if (needle.empty()) continue;
        auto text = join(needle, 0, needle.size());
        if (!seen.insert(text).second) continue;
        std::size_t count = 0;
        for (const auto& hay : docs) {
            for (auto it = hay.begin(); (it = std::search(it, hay.end(), needle.begin(), needle.end())) != hay.end();
                 ++it) {
                ++count;
            }
        }
        if (count > 0) out.push_back({std::move(text), needle.size(), count});
    }
    std::sort(out.begin(), out.end(), [](const CandidatePhrase& a, const CandidatePhrase& b) {
        if (a.corpus_count != b.corpus_count) return a.corpus_count > b.corpus_count;
        return a.text < b.text;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Scoring

double log_odds_counts(std::size_t k_f, std::size_t n_f, std::size_t k_b, std::size_t n_b, double alpha) {
    if (n_f == 0) throw ValidationError("dimension has no foreground captions");
    if (k_f > n_f || k_b > n_b) throw ValidationError("log_odds: count exceeds partition size");
    const double kf = static_cast<double>(k_f), nf = static_cast<double>(n_f);
    const double kb = static_cast<double>(k_b), nb = static_cast<double>(n_b);
    return std::log((kf + alpha) / (nf - kf + alpha)) - std::log((kb + alpha) / (nb - kb + alpha));
}

std::vector<bool> foreground_mask(const Corpus& corpus, const std::vector<std::string>& anchors) {
    const auto norm = normalized_list(anchors);
    std::vector<bool> mask(corpus.size(), false);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        mask[i] = std::any_of(norm.begin(), norm.end(), [&](const std::string& a) { return corpus.contains(i, a); });
    }
    return mask;
}

namespace {

struct Partition {
    std::vector<bool> fg;
    std::size_t n_f = 0;
    std::size_t n_b = 0;
};

Partition partition_for(const Corpus& corpus, const std::vector<std::string>& anchors) {
    Partition p;
    p.fg = foreground_mask(corpus, anchors);
    p.n_f = static_cast<std::size_t>(std::count(p.fg.begin(), p.fg.end(), true));
    p.n_b = corpus.size() - p.n_f;
    return p;
}

double score_with(const std::string& phrase, const Partition& part, const Corpus& corpus, double alpha) {
    std::size_t k_f = 0, k_b = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!corpus.contains_normalized(i, phrase)) continue;
        if (part.fg[i]) ++k_f;
        else ++k_b;
    }
    return log_odds_counts(k_f, part.n_f, k_b, part.n_b, alpha);
}

}  // namespace

double log_odds(const std::string& phrase, ProbeDimension dim, const ProbeConfig& cfg, const Corpus& corpus) {
    const auto part = partition_for(corpus, cfg.anchors[index_of(dim)]);
    return score_with(normalize_phrase(phrase), part, corpus, cfg.alpha);
}

std::array<double, kNumProbeDims> dimension_scores(const std::string& phrase, const ProbeConfig& cfg,
                                                   const Corpus& corpus) {
    std::array<double, kNumProbeDims> out{};
    const auto norm = normalize_phrase(phrase);
    for (auto d : kAllProbeDims) {
        const auto part = partition_for(corpus, cfg.anchors[index_of(d)]);
        out[index_of(d)] = part.n_f == 0 ? std::numeric_limits<double>::quiet_NaN()
                                         : score_with(norm, part, corpus, cfg.alpha);
    }
    return out;
}

std::optional<ProbeDimension> best_dimension(const std::array<double, kNumProbeDims>& scores) {
    std::optional<std::size_t> best;
    for (std::size_t d = 0; d < kNumProbeDims; ++d) {
        if (std::isnan(scores[d])) continue;
        if (!best || scores[d] > scores[*best]) best = d;
    }
    if (!best || !(scores[*best] > 0.0)) return std::nullopt;
    return static_cast<ProbeDimension>(*best);
}

PhraseSelection assign_and_select(const std::vector<CandidatePhrase>& candidates, const ProbeConfig& cfg,
                                  const Corpus& corpus) {
    PhraseSelection sel;
    std::array<Partition, kNumProbeDims> parts;
    for (auto d : kAllProbeDims) {
        parts[index_of(d)] = partition_for(corpus, cfg.anchors[index_of(d)]);
        if (parts[index_of(d)].n_f == 0) sel.no_foreground.push_back(d);
    }
    for (const auto& c : candidates) {
        std::array<double, kNumProbeDims> scores{};
        for (std::size_t d = 0; d < kNumProbeDims; ++d) {
            scores[d] = parts[d].n_f == 0 ? std::numeric_limits<double>::quiet_NaN()
                                          : score_with(c.text, parts[d], corpus, cfg.alpha);
        }
        const auto best = best_dimension(scores);
        if (!best) continue;
        sel.per_dim[index_of(*best)].push_back({*best, c.text, scores[index_of(*best)], c.corpus_count});
    }
    for (auto& list : sel.per_dim) {
        std::sort(list.begin(), list.end(), [](const ScoredPhrase& a, const ScoredPhrase& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.text < b.text;
        });
        if (list.size() > cfg.top_n) list.resize(cfg.top_n);
    }
    return sel;
}

// ---------------------------------------------------------------------------
// Prompt sets

std::array<PromptSet, kNumProbeDims> expand_templates(
    const std::array<std::vector<std::string>, kNumProbeDims>& phrases, const std::vector<std::string>& templates) {
    const std::string slot = kPhraseSlot;
    for (const auto& t : templates) {
        const auto first = t.find(slot);
        if (first == std::string::npos || t.find(slot, first + 1) != std::string::npos) {
            throw ValidationError("template must contain exactly one {phrase} placeholder: '" + t + "'");
        }
    }
    std::array<PromptSet, kNumProbeDims> out;
    for (auto d : kAllProbeDims) {
        auto& set = out[index_of(d)];
        set.dimension = d;
        std::set<std::string> seen;
        for (const auto& phrase : phrases[index_of(d)]) {
            for (const auto& t : templates) {
                std::string prompt = t;
                prompt.replace(prompt.find(slot), slot.size(), phrase);
                if (seen.insert(prompt).second) set.prompts.push_back(std::move(prompt));
            }
        }
    }
    return out;
}

std::array<PromptSet, kNumProbeDims> build_prompt_sets(const PhraseSelection& selection, const ProbeConfig& cfg) {
    std::array<std::vector<std::string>, kNumProbeDims> phrases;
    for (auto d : kAllProbeDims) {
        for (const auto& p : selection.per_dim[index_of(d)]) phrases[index_of(d)].push_back(p.text);
        if (phrases[index_of(d)].empty()) phrases[index_of(d)] = normalized_list(cfg.anchors[index_of(d)]);
    }
    return expand_templates(phrases, cfg.templates);
}

Json export_phrase_frequencies(const PhraseSelection& selection) {
    Json arr = Json::array();
    for (const auto& list : selection.per_dim) {
        for (const auto& p : list) {
            Json e;
            e["dimension"] = std::string(to_string(p.dimension));
            e["phrase"] = p.text;
            e["score"] = p.score;
            e["corpus_count"] = p.corpus_count;
            arr.push_back(std::move(e));
        }
    }
    return arr;
}

// ---------------------------------------------------------------------------
// Probe vectors

ProbeVector probe_vector(std::span<const float> image, const std::array<PromptSet, kNumProbeDims>& prompts,
                         Pooling pooling) {
    ProbeVector out;
    for (auto d : kAllProbeDims) {
        const auto& set = prompts[index_of(d)];
        if (!set.embeddings || set.embeddings->rows() == 0) {
            throw ValidationError("probe_vector: no prompt embeddings for " + std::string(to_string(d)));
        }
        const auto& emb = *set.embeddings;
        double pooled = pooling == Pooling::Max ? -std::numeric_limits<double>::infinity() : 0.0;
        for (std::size_t r = 0; r < emb.rows(); ++r) {
            const double s = cosine(image, emb.row(r));
            if (pooling == Pooling::Max) pooled = std::max(pooled, s);
            else pooled += s;
        }
        if (pooling == Pooling::Mean) pooled /= static_cast<double>(emb.rows());
        out.v[index_of(d)] = std::clamp(pooled, -1.0, 1.0);
    }
    return out;
}

std::vector<ProbeVector> score_probes(const EmbeddingMatrix& images, const Manifest& manifest,
                                      const std::array<PromptSet, kNumProbeDims>& prompts, Pooling pooling) {
    bind_embeddings(manifest, images, "image embeddings");
    std::vector<ProbeVector> out;
    out.reserve(manifest.size());
    for (const auto& s : manifest.samples) out.push_back(probe_vector(images.row(s.row), prompts, pooling));
    return out;
}

void write_probes(const fs::path& path, const Manifest& manifest, std::span<const ProbeVector> probes) {
    if (probes.size() != manifest.size()) throw Error("probe count does not match manifest");
    std::ostringstream os;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        Json j;
        j["id"] = manifest.samples[i].id;
        for (auto d : kAllProbeDims) j[std::string(to_string(d))] = probes[i][d];
        os << j.dump() << '\n';
    }
    write_text_file(path, os.str());
}

std::vector<ProbeVector> read_probes(const fs::path& path, const Manifest& manifest) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open probes " + path.string());
    std::vector<std::optional<ProbeVector>> slots(manifest.size());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const Json j = Json::parse(line);
            const auto id = j.at("id").get<std::string>();
            const auto idx = manifest.find(id);
            if (!idx) throw ValidationError("unknown id " + id);
            if (slots[*idx]) throw ValidationError("duplicate probe record for id " + id);
            ProbeVector v;
            for (auto d : kAllProbeDims) {
                const double x = j.at(std::string(to_string(d))).get<double>();
                if (!std::isfinite(x) || x < -1.0 || x > 1.0) throw ValidationError("probe score out of range for " + id);
                v.v[index_of(d)] = x;
            }
            slots[*idx] = v;
        } catch (const Json::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    std::vector<ProbeVector> out;
    out.reserve(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) throw ValidationError(path.string() + ": no probe vector for id " + manifest.samples[i].id);
        out.push_back(*slots[i]);
    }
    return out;
}

}  // namespace darb
