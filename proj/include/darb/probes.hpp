#pragma once
// Semantic probe mining and scoring.
//
// Mining: caption corpus -> n-gram candidates -> smoothed log-odds score per
// dimension (anchor-bearing captions vs the rest) -> top-N phrases per
// dimension -> template-expanded prompt sets.
// Scoring: image embedding vs prompt embeddings, pooled per dimension.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "darb/interchange.hpp"

namespace darb {

enum class Pooling : std::uint8_t { Max, Mean };
std::string_view to_string(Pooling p) noexcept;
Pooling parse_pooling(std::string_view text);

struct ProbeConfig {
    std::array<std::vector<std::string>, kNumProbeDims> anchors;
    std::vector<std::string> whitelist;
    std::vector<std::string> blacklist;
    std::vector<std::string> stopwords;
    std::vector<std::string> templates;
    std::size_t top_n = 20;
    std::size_t f_min = 5;
    double alpha = 0.5;
    Pooling pooling = Pooling::Max;

    static ProbeConfig defaults();
    // Missing keys keep their defaults.
    static ProbeConfig from_json(const Json& j);
    Json to_json() const;
    // Anchor lists non-empty and pairwise disjoint after normalization; templates valid.
    void validate() const;
};

// Lowercase, drop apostrophes, split on any other ASCII punctuation or whitespace.
std::vector<std::string> tokenize(std::string_view text);
std::string normalize_phrase(std::string_view text);

// Tokenized captions with per-caption n-gram sets (n = 1..3) for containment tests.
class Corpus {
public:
    explicit Corpus(const std::vector<std::string>& captions);

    std::size_t size() const noexcept { return docs_.size(); }
    const std::vector<std::string>& tokens(std::size_t doc) const { return docs_.at(doc); }
    // True when the normalized phrase occurs as a contiguous token run in the caption.
    bool contains(std::size_t doc, const std::string& phrase) const;
    // Same test for a phrase that is already normalized (skips re-tokenizing).
    bool contains_normalized(std::size_t doc, const std::string& phrase) const;

private:
    std::vector<std::vector<std::string>> docs_;
    std::vector<std::unordered_set<std::string>> grams_;
};

struct CandidatePhrase {
    std::string text;
    std::size_t n = 0;
    std::size_t corpus_count = 0;

    friend bool operator==(const CandidatePhrase&, const CandidatePhrase&) = default;
};

// All 1-3-grams passing the stopword/numeric filters with frequency >= f_min,
// minus blacklist, plus any whitelisted phrase present in the corpus.
// Sorted by (count desc, text asc).
std::vector<CandidatePhrase> extract_candidates(const std::vector<std::string>& captions, const ProbeConfig& cfg);

// Candidate list supplied by an external phrase extractor; counts are taken
// from the corpus and phrases that never occur are dropped.
std::vector<CandidatePhrase> import_candidates(const std::vector<std::string>& phrases,
                                               const std::vector<std::string>& captions);

// ln((kf+a)/(nf-kf+a)) - ln((kb+a)/(nb-kb+a)).
double log_odds_counts(std::size_t k_f, std::size_t n_f, std::size_t k_b, std::size_t n_b, double alpha = 0.5);

// Foreground mask for a dimension: captions containing at least one of its anchors.
std::vector<bool> foreground_mask(const Corpus& corpus, const std::vector<std::string>& anchors);

// Throws ValidationError("dimension has no foreground captions") when no caption holds an anchor.
double log_odds(const std::string& phrase, ProbeDimension dim, const ProbeConfig& cfg, const Corpus& corpus);

struct ScoredPhrase {
    ProbeDimension dimension;
    std::string text;
    double score = 0.0;
    std::size_t corpus_count = 0;
};

struct PhraseSelection {
    std::array<std::vector<ScoredPhrase>, kNumProbeDims> per_dim;
    // Dimensions skipped because no caption carried one of their anchors.
    std::vector<ProbeDimension> no_foreground;
};

// Dimension with the highest score when that score is > 0 (NaN entries ignored, ties to the lower index).
std::optional<ProbeDimension> best_dimension(const std::array<double, kNumProbeDims>& scores);

// Each phrase goes to its best-scoring dimension when that score is > 0;
// per dimension the top_n by (score desc, text asc) are kept.
PhraseSelection assign_and_select(const std::vector<CandidatePhrase>& candidates, const ProbeConfig& cfg,
                                  const Corpus& corpus);

// Scores for one phrase against every dimension (NaN where a dimension has no foreground).
std::array<double, kNumProbeDims> dimension_scores(const std::string& phrase, const ProbeConfig& cfg,
                                                   const Corpus& corpus);

// Every template x phrase combination, phrase-major, first occurrence kept.
std::array<PromptSet, kNumProbeDims> expand_templates(
    const std::array<std::vector<std::string>, kNumProbeDims>& phrases, const std::vector<std::string>& templates);

// Selection -> prompt sets; a dimension with no selected phrase falls back to its anchor terms.
std::array<PromptSet, kNumProbeDims> build_prompt_sets(const PhraseSelection& selection, const ProbeConfig& cfg);

// JSON array of {dimension, phrase, score, corpus_count} in selection order.
Json export_phrase_frequencies(const PhraseSelection& selection);

// Fixed order: trees, debris, infrastructure, flood.
struct ProbeVector {
    std::array<double, kNumProbeDims> v{};

    double operator[](std::size_t i) const noexcept { return v[i]; }
    double operator[](ProbeDimension d) const noexcept { return v[index_of(d)]; }
    friend bool operator==(const ProbeVector&, const ProbeVector&) = default;
};

ProbeVector probe_vector(std::span<const float> image, const std::array<PromptSet, kNumProbeDims>& prompts,
                         Pooling pooling);

std::vector<ProbeVector> score_probes(const EmbeddingMatrix& images, const Manifest& manifest,
                                      const std::array<PromptSet, kNumProbeDims>& prompts, Pooling pooling);

// probes.jsonl: {id, trees, debris, infrastructure, flood}.
void write_probes(const fs::path& path, const Manifest& manifest, std::span<const ProbeVector> probes);
std::vector<ProbeVector> read_probes(const fs::path& path, const Manifest& manifest);

}  // namespace darb
