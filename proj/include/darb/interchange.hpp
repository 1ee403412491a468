#pragma once
// File formats shared with the encoder exporter.
//
//   manifest.jsonl     one Sample per line; line order defines row alignment
//   *.darb             "DARB" | u32 version=1 | u64 rows | u64 cols | rows*cols f32, all LE
//   predictions.jsonl  {id, model, p_mild, p_moderate, p_severe}
//   prompts_<dim>.json {dimension, prompts[]}
//   captions.jsonl     {id, description, ...}

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "darb/core.hpp"

namespace darb {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Manifest {
    std::vector<Sample> samples;
    std::array<std::size_t, kNumClasses> class_counts{};

    std::size_t size() const noexcept { return samples.size(); }
    // Index of the sample with this id, or nullopt.
    std::optional<std::size_t> find(const std::string& id) const;
    std::vector<Severity> labels() const;

    // Rebuilds the id index and class counts; throws on duplicate ids or bad coordinates.
    void reindex();

    friend bool operator==(const Manifest& a, const Manifest& b) {
        return a.samples == b.samples && a.class_counts == b.class_counts;
    }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

Manifest make_manifest(std::vector<Sample> samples);
Manifest read_manifest(const fs::path& path);
void write_manifest(const Manifest& manifest, const fs::path& path);
Json sample_to_json(const Sample& s);
Sample sample_from_json(const Json& j);

// Row-major float matrix, the in-memory form of a .darb blob.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    EmbeddingMatrix(std::size_t rows, std::size_t cols);
    EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    const std::vector<float>& data() const noexcept { return data_; }

    friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

inline constexpr std::array<char, 4> kEmbeddingMagic = {'D', 'A', 'R', 'B'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 24;

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m);
EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes);
void write_embeddings(const EmbeddingMatrix& m, const fs::path& path);
EmbeddingMatrix read_embeddings(const fs::path& path);

// Throws unless rows match the manifest and every sample row is in range.
void bind_embeddings(const Manifest& manifest, const EmbeddingMatrix& m, const std::string& what);

struct PredictionRecord {
    std::string id;
    std::string model;
    ProbTriple probs;
};

// Per-model predictions aligned to manifest order; missing entries are nullopt.
struct PredictionSet {
    std::map<std::string, std::vector<std::optional<ProbTriple>>> by_model;
    // Manifest ids without a prediction, per model.
    std::map<std::string, std::vector<std::string>> missing;

    bool has_model(const std::string& model) const { return by_model.count(model) != 0; }
    // Throws if the model is absent or any sample lacks a prediction.
    std::vector<ProbTriple> complete(const std::string& model) const;
};

PredictionSet read_predictions(const fs::path& path, const Manifest& manifest);
PredictionSet parse_predictions(std::istream& in, const Manifest& manifest);
// Merges b into a; duplicate (id, model) pairs are an error.
void merge_predictions(PredictionSet& a, const PredictionSet& b, const Manifest& manifest);
void write_predictions(const fs::path& path, const Manifest& manifest, const std::string& model,
                       std::span<const ProbTriple> probs);
void write_predictions(std::ostream& out, const Manifest& manifest, const std::string& model,
                       std::span<const ProbTriple> probs);

enum class ProbeDimension : std::uint8_t { Trees = 0, Debris = 1, Infrastructure = 2, Flood = 3 };
inline constexpr std::size_t kNumProbeDims = 4;
inline constexpr std::array<ProbeDimension, kNumProbeDims> kAllProbeDims = {
    ProbeDimension::Trees, ProbeDimension::Debris, ProbeDimension::Infrastructure,
    ProbeDimension::Flood};

std::string_view to_string(ProbeDimension d) noexcept;
ProbeDimension parse_probe_dimension(std::string_view text);
constexpr std::size_t index_of(ProbeDimension d) noexcept { return static_cast<std::size_t>(d); }

struct PromptSet {
    ProbeDimension dimension = ProbeDimension::Trees;
    std::vector<std::string> prompts;
    std::optional<EmbeddingMatrix> embeddings;
};

// Serialized JSON text for prompts_<dim>.json (embeddings are stored separately).
std::string prompt_set_json(const PromptSet& set);
PromptSet parse_prompt_set(const std::string& text);
void write_prompt_set(const PromptSet& set, const fs::path& path);
// Reads prompts_<dim>.json; when `embeddings` is given the blob is loaded and row-checked.
PromptSet read_prompt_set(const fs::path& path, const std::optional<fs::path>& embeddings = {});
// Loads prompts_<dim>.json (+ prompts_<dim>.darb when present) for all four dimensions.
std::array<PromptSet, kNumProbeDims> read_prompt_dir(const fs::path& dir);
std::string prompt_file_name(ProbeDimension d);

// Warnings for a caption record; throws ValidationError on missing id/description.
std::vector<std::string> validate_caption_record(const Json& record);

struct CaptionRecord {
    std::string id;
    std::string description;
    std::vector<std::string> warnings;
};
std::vector<CaptionRecord> read_captions(const fs::path& path);

// Whole-file helpers.
std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);

}  // namespace darb
