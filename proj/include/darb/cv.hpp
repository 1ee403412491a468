#pragma once
// Stratified k-fold evaluation, out-of-fold collection, end-to-end runs and
// geo-referenced export.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darb/arbiter.hpp"
#include "darb/confidence.hpp"
#include "darb/fusion.hpp"
#include "darb/interchange.hpp"
#include "darb/metrics.hpp"
#include "darb/probes.hpp"

namespace darb {

struct FoldAssignment {
    std::size_t k = 3;
    std::uint64_t seed = 0;
    std::vector<std::size_t> fold_of;  // per sample, manifest order

    std::vector<std::size_t> members(std::size_t fold) const;
    std::vector<std::size_t> complement(std::size_t fold) const;
    std::vector<std::size_t> fold_sizes() const;
    // [fold][class] counts.
    std::vector<std::array<std::size_t, kNumClasses>> class_sizes(std::span<const Severity> labels) const;

    Json to_json(const Manifest& manifest) const;
    static FoldAssignment from_json(const Json& j, const Manifest& manifest);
};

// Each class is shuffled by seed, then dealt round-robin. The dealing position
// carries over from one class to the next (classes in label order), so fold
// totals as well as per-class counts differ by at most one.
FoldAssignment stratified_folds(std::span<const Severity> labels, std::size_t k, std::uint64_t seed);
FoldAssignment stratified_folds(const Manifest& manifest, std::size_t k, std::uint64_t seed);

struct FoldModel {
    std::vector<std::size_t> train_indices;                 // samples the model was fit on
    std::function<std::vector<ProbTriple>(std::span<const std::size_t>)> predict;  // empty = missing
};

struct OofResult {
    std::vector<ProbTriple> probs;       // one per sample
    std::vector<std::size_t> fold;       // fold whose model produced it
};

// Every sample is predicted by the model of its own fold. Throws on a missing
// fold model, on a wrong-length prediction, or when a model trained on a sample
// it is asked to predict.
OofResult collect_oof(const FoldAssignment& folds, std::span<const FoldModel> models);

// Per-fold arbiter fit on training-side disagreements, arbitrate held-out samples.
CrossFit arbitrate_oof(const ArbitrationInputs& in, const FoldAssignment& folds, const FeatureConfig& cfg,
                       const FitOptions& opt = {});

enum class GeoMode : std::uint8_t { All, MisclassifiedOnly };
GeoMode parse_geo_mode(std::string_view text);

struct GeoRecord {
    Severity predicted = Severity::Mild;
    std::string source;
    std::optional<double> margin;
    std::optional<Triage> triage;
};

// Records align with manifest order.
std::vector<GeoRecord> geo_records(std::span<const ArbitrationOutcome> outcomes);
std::vector<GeoRecord> geo_records(std::span<const ProbTriple> preds, std::span<const Severity> truth,
                                   const std::string& model, const TriageThresholds& th);

// RFC 7946 FeatureCollection of Points, coordinates [lon, lat].
Json export_geojson(const Manifest& manifest, std::span<const GeoRecord> records, GeoMode mode);

// Structural checks used by tests and `validate`: type fields, [lon, lat] bounds,
// required properties. Returns a list of problems (empty = valid).
std::vector<std::string> check_geojson(const Json& fc);

// ---------------------------------------------------------------------------
// Experiment runs

struct RunConfig {
    fs::path manifest;
    fs::path image_embeddings;
    fs::path text_embeddings;
    std::optional<fs::path> prompts_dir;    // prompts_<dim>.json + .darb
    std::optional<fs::path> probes;         // precomputed probes.jsonl
    std::vector<fs::path> external_predictions;
    std::size_t k = 3;
    std::uint64_t seed = 0;
    TrainConfig train;                       // mode is overridden per entry of `modes`
    std::vector<FusionMode> modes = {FusionMode::ImageOnly, FusionMode::TextOnly, FusionMode::Fused};
    std::string model_a = "image_only";
    std::string model_b = "fused";
    TriageThresholds triage;
    FeatureConfig arbiter = FeatureConfig::conf();
    std::vector<FeatureConfig> ablation = FeatureConfig::canonical_presets();
    FitOptions fit;
    Pooling pooling = Pooling::Max;

    // Relative paths resolve against `base`.
    static RunConfig from_json(const Json& j, const fs::path& base = {});
    Json to_json() const;
};

struct ModelResult {
    std::string name;
    std::string modality;
    std::vector<ProbTriple> oof;
    MetricReport pooled;
    std::vector<MetricReport> per_fold;
    ProfileReport profile;
    std::optional<double> clip_score;
};

struct ExperimentRun {
    RunConfig config;
    FoldAssignment folds;
    std::vector<ModelResult> models;
    std::vector<ArbitrationOutcome> outcomes;
    ModelResult arbitrated;
    std::vector<ArbiterModel> arbiter_models;
    AblationTable ablation;
    std::vector<std::string> warnings;
};

// Executes the full pipeline and writes the run directory under `out`:
// config.json, folds.json, run_info.json, predictions/, reports/, geo/.
ExperimentRun run_experiment(const RunConfig& cfg, const fs::path& out);

// Profile of arbitrated outcomes: margins use the chosen model's probabilities
// (model A's on agreement).
std::vector<MarginRecord> arbitrated_errors(std::span<const ArbitrationOutcome> outcomes,
                                            std::span<const ProbTriple> pred_a, std::span<const ProbTriple> pred_b,
                                            std::span<const Severity> truth, const TriageThresholds& th);

}  // namespace darb
