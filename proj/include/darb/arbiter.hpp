#pragma once
// Disagreement-driven arbitration between two base models.
//
// When both argmaxes agree the shared class is returned untouched. Otherwise a
// logistic-regression trust score s = sigmoid(w.z + b) over standardized
// features picks model A's class when s >= tau, model B's class otherwise.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darb/core.hpp"
#include "darb/interchange.hpp"
#include "darb/probes.hpp"

namespace darb {

struct FeatureConfig {
    std::string name = "custom";
    bool use_confidence = true;
    bool use_uncertainty = false;
    bool use_probes = false;
    double tau_decision = 0.5;

    static FeatureConfig conf();
    static FeatureConfig conf_unc();
    static FeatureConfig conf_unc_probe();
    static FeatureConfig probe_only();
    // In table order: conf, conf+unc, conf+unc+probe, probe_only.
    static std::vector<FeatureConfig> canonical_presets();
    // Accepts "conf", "conf+unc", "conf+unc+probe", "probe_only" (with or without the LOGREG_ prefix).
    static FeatureConfig preset(std::string_view name);

    void validate() const;
    std::size_t feature_count() const noexcept;
    std::vector<std::string> feature_names() const;
    // "Confidence only", "Confidence + Uncertainty", ...
    std::string features_label() const;
    // "LOGREG_conf [τ=0.35]"
    std::string setting_label() const;

    Json to_json() const;
    static FeatureConfig from_json(const Json& j);
};

// Fixed order: conf_a, conf_b, ent_a, ent_b, probe_trees, probe_debris, probe_infra, probe_flood,
// filtered by the enabled families.
std::vector<double> assemble_features(const ProbTriple& a, const ProbTriple& b, const ProbeVector& probes,
                                      const FeatureConfig& cfg);

struct FitOptions {
    double reg_l2 = 1e-2;
    bool balance_classes = false;  // inverse-frequency sample weights
    std::size_t max_iter = 5000;
    double grad_tol = 1e-8;
};

struct FitReport {
    std::size_t iterations = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double grad_inf_norm = 0.0;
    bool converged = false;
    std::size_t n_trust_a = 0;
    std::size_t n_trust_b = 0;
    std::vector<std::string> dropped_features;  // zero variance on the training set
};

struct ArbiterModel {
    FeatureConfig config;
    std::vector<std::string> feature_names;  // active features after dropping
    std::vector<std::size_t> kept;           // indices into the assembled vector
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> stds;
    double bias = 0.0;
    FitReport fit;

    // Trust score for model A from a full assembled (pre-drop) feature vector.
    double score(std::span<const double> raw) const;

    Json to_json() const;
    static ArbiterModel from_json(const Json& j);
};

// x rows are assembled feature vectors, y[i] = 1 when model A is the one to trust.
// Throws ValidationError on an empty set or when every label is the same.
ArbiterModel fit_arbiter(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                         const FeatureConfig& cfg, const FitOptions& opt = {});

// Regularized objective at (w, b) on standardized rows; exposed for tests.
double arbiter_objective(const std::vector<std::vector<double>>& z, const std::vector<int>& y,
                         const std::vector<double>& sample_w, std::span<const double> w, double b, double reg_l2);

enum class Source : std::uint8_t { Agreement = 0, ArbiterA = 1, ArbiterB = 2 };
std::string_view to_string(Source s) noexcept;
Source parse_source(std::string_view text);

struct ArbitrationOutcome {
    std::string id;
    Severity final_label = Severity::Mild;
    Source source = Source::Agreement;
    std::optional<double> score;
    Severity pred_a = Severity::Mild;
    Severity pred_b = Severity::Mild;
};

ArbitrationOutcome arbitrate(const ProbTriple& a, const ProbTriple& b, const ProbeVector& probes,
                             const ArbiterModel& model);
// Same decision from a caller-built feature vector (length = model.config.feature_count()).
ArbitrationOutcome arbitrate_features(const ProbTriple& a, const ProbTriple& b, std::span<const double> raw,
                                      const ArbiterModel& model);

// Aligned per-sample inputs. `probes` may be empty when no config uses them.
struct ArbitrationInputs {
    std::span<const std::string> ids;
    std::span<const ProbTriple> pred_a;
    std::span<const ProbTriple> pred_b;
    std::span<const ProbeVector> probes;
    std::span<const Severity> truth;

    std::size_t size() const noexcept { return pred_a.size(); }
    void validate(bool need_probes) const;
};

struct TrustSet {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    std::vector<std::size_t> index;  // sample index of each row
};

// Disagreements among `subset` where exactly one model is correct.
TrustSet build_trust_set(const ArbitrationInputs& in, std::span<const std::size_t> subset, const FeatureConfig& cfg);

struct CrossFit {
    std::vector<ArbitrationOutcome> outcomes;  // one per sample, input order
    std::vector<ArbiterModel> fold_models;
};

// For each fold: fit on training-fold trust cases, arbitrate that fold's samples.
// Throws Error naming the fold when a training side is degenerate.
CrossFit cross_fit_arbitrate(const ArbitrationInputs& in, std::span<const std::size_t> fold_of, std::size_t k,
                             const FeatureConfig& cfg, const FitOptions& opt = {});

struct AblationRow {
    FeatureConfig preset;
    bool skipped = false;
    std::string warning;
    // Binary trust decision on held-out disagreements where exactly one model is correct.
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::size_t n_trust_cases = 0;
    // Severity accuracy over every held-out disagreement (both-wrong included).
    double final_accuracy = 0.0;
    std::size_t n_disagreements = 0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::vector<std::string> warnings;
};

AblationTable run_ablation(const ArbitrationInputs& in, std::span<const FeatureConfig> presets,
                           std::span<const std::size_t> fold_of, std::size_t k, const FitOptions& opt = {});

Json ablation_to_json(const AblationTable& t);
// Columns: Arbitration Setting, Features Used, Accuracy, Macro-F1.
std::string format_ablation_table(const AblationTable& t);

Json outcome_to_json(const ArbitrationOutcome& o);
ArbitrationOutcome outcome_from_json(const Json& j);
// arbitrated.jsonl, aligned to manifest order.
std::vector<ArbitrationOutcome> read_outcomes(const fs::path& path, const Manifest& manifest);

}  // namespace darb
