#pragma once
// Classification metrics over a K-class confusion matrix (K = 3 in practice,
// K = 2 for binary tasks such as arbiter trust decisions) and CLIPScore.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "darb/core.hpp"
#include "darb/interchange.hpp"

namespace darb {

// counts[t][p] = number of samples with true class t predicted as p.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = kNumClasses);
    ConfusionMatrix(std::vector<std::vector<std::uint64_t>> counts);

    std::size_t num_classes() const noexcept { return counts_.size(); }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_.at(truth).at(pred); }
    std::uint64_t total() const noexcept { return total_; }
    void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);

    std::uint64_t row_sum(std::size_t c) const;
    std::uint64_t col_sum(std::size_t c) const;
    std::uint64_t trace() const;

    const std::vector<std::vector<std::uint64_t>>& counts() const noexcept { return counts_; }

private:
    std::vector<std::vector<std::uint64_t>> counts_;
    std::uint64_t total_ = 0;
};

ConfusionMatrix confusion(std::span<const Severity> truth, std::span<const Severity> pred);
ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                          std::size_t num_classes);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct MetricReport {
    double accuracy = 0.0;
    double recall_weighted = 0.0;
    double recall_macro = 0.0;
    double precision_weighted = 0.0;
    double precision_macro = 0.0;
    double f1_weighted = 0.0;
    double f1_macro = 0.0;
    double mcc = 0.0;
    std::vector<ClassMetrics> per_class;
    std::uint64_t total = 0;
};

// Throws ValidationError on an empty matrix.
MetricReport evaluate(const ConfusionMatrix& cm);

// Multiclass (covariance-form) Matthews correlation; 0 when a denominator factor is 0.
double matthews(const ConfusionMatrix& cm);

// Cosine between an image and a caption embedding.
double clip_score(std::span<const float> image, std::span<const float> text);
// Mean of per-pair scores, accumulated in index order.
double corpus_clip_score(std::span<const std::pair<std::span<const float>, std::span<const float>>> pairs);

Json confusion_to_json(const ConfusionMatrix& cm);
Json report_to_json(const MetricReport& r);

// One row of the model-comparison table.
struct ComparisonRow {
    std::string model;
    std::string modality;
    MetricReport report;
    std::optional<double> clip_score;
};

// Aligned text table: Model, Modality, Accuracy, Recall, Precision, SW-F1, MCC, Clipscore,
// followed by the macro-averaged Recall/Precision/F1 columns.
std::string format_comparison_table(std::span<const ComparisonRow> rows);

}  // namespace darb
