#include "darb/metrics.hpp"

#include <cmath>

#include "text_table.hpp"

namespace darb {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : counts_(num_classes, std::vector<std::uint64_t>(num_classes, 0)) {
    if (num_classes < 2) throw ValidationError("confusion matrix needs at least 2 classes");
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::vector<std::uint64_t>> counts) : counts_(std::move(counts)) {
    if (counts_.size() < 2) throw ValidationError("confusion matrix needs at least 2 classes");
    for (const auto& row : counts_) {
        if (row.size() != counts_.size()) throw ValidationError("confusion matrix must be square");
        for (auto v : row) total_ += v;
    }
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
    counts_.at(truth).at(pred) += n;
    total_ += n;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (auto v : counts_.at(c)) s += v;
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (const auto& row : counts_) s += row.at(c);
    return s;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) s += counts_[i][i];
    return s;
}

ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                          std::size_t num_classes) {
    if (truth.size() != pred.size()) {
        throw ValidationError("confusion: label sequences differ in length (" + std::to_string(truth.size()) +
                              " vs " + std::to_string(pred.size()) + ")");
    }
    if (truth.empty()) throw ValidationError("confusion: empty label sequence");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= num_classes || pred[i] >= num_classes) throw ValidationError("confusion: label out of range");
        cm.add(truth[i], pred[i]);
    }
    return cm;
}

ConfusionMatrix confusion(std::span<const Severity> truth, std::span<const Severity> pred) {
    std::vector<std::size_t> t, p;
    t.reserve(truth.size());
    p.reserve(pred.size());
    for (auto s : truth) t.push_back(index_of(s));
    for (auto s : pred) p.push_back(index_of(s));
    return confusion(t, p, kNumClasses);
}

double matthews(const ConfusionMatrix& cm) {
    const std::size_t k = cm.num_classes();
    const double s = static_cast<double>(cm.total());
    const double c = static_cast<double>(cm.trace());
    double pt = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double t_i = static_cast<double>(cm.row_sum(i));
        const double p_i = static_cast<double>(cm.col_sum(i));
        pt += p_i * t_i;
        pp += p_i * p_i;
        tt += t_i * t_i;
    }
    const double a = s * s - pp;
    const double b = s * s - tt;
    if (a == 0.0 || b == 0.0) return 0.0;
    return (c * s - pt) / (std::sqrt(a) * std::sqrt(b));
}

MetricReport evaluate(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ValidationError("evaluate: empty confusion matrix");
    const std::size_t k = cm.num_classes();
    const double total = static_cast<double>(cm.total());
    MetricReport r;
    r.total = cm.total();
    r.accuracy = static_cast<double>(cm.trace()) / total;
    r.per_class.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        const double tp = static_cast<double>(cm.at(c, c));
        const auto rows = cm.row_sum(c);
        const auto cols = cm.col_sum(c);
        auto& m = r.per_class[c];
        m.support = rows;
        m.precision = cols == 0 ? 0.0 : tp / static_cast<double>(cols);
        m.recall = rows == 0 ? 0.0 : tp / static_cast<double>(rows);
        m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    // support_c * recall_c is exactly the integer tp_c, so weighted recall is
    // accumulated from the counts and equals accuracy bit-for-bit.
    std::uint64_t weighted_hits = 0;
    for (std::size_t c = 0; c < k; ++c) weighted_hits += cm.at(c, c);
    r.recall_weighted = static_cast<double>(weighted_hits) / total;
    for (const auto& m : r.per_class) {
        const double w = static_cast<double>(m.support) / total;
        r.precision_weighted += w * m.precision;
        r.f1_weighted += w * m.f1;
        r.precision_macro += m.precision;
        r.recall_macro += m.recall;
        r.f1_macro += m.f1;
    }
    r.precision_macro /= static_cast<double>(k);
    r.recall_macro /= static_cast<double>(k);
    r.f1_macro /= static_cast<double>(k);
    r.mcc = matthews(cm);
    return r;
}

double clip_score(std::span<const float> image, std::span<const float> text) { return cosine(image, text); }

double corpus_clip_score(std::span<const std::pair<std::span<const float>, std::span<const float>>> pairs) {
    if (pairs.empty()) throw ValidationError("corpus_clip_score: no pairs");
    double sum = 0.0;
    for (const auto& [img, txt] : pairs) sum += clip_score(img, txt);
    return sum / static_cast<double>(pairs.size());
}

Json confusion_to_json(const ConfusionMatrix& cm) {
    Json j = Json::array();
    for (const auto& row : cm.counts()) j.push_back(row);
    return j;
}

Json report_to_json(const MetricReport& r) {
    Json j;
    j["accuracy"] = r.accuracy;
    j["recall_weighted"] = r.recall_weighted;
    j["recall_macro"] = r.recall_macro;
    j["precision_weighted"] = r.precision_weighted;
    j["precision_macro"] = r.precision_macro;
    j["f1_weighted"] = r.f1_weighted;
    j["f1_macro"] = r.f1_macro;
    j["mcc"] = r.mcc;
    j["total"] = r.total;
    Json per = Json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& m = r.per_class[c];
        Json e;
        e["class"] = r.per_class.size() == kNumClasses ? std::string(to_string(static_cast<Severity>(c)))
                                                        : std::to_string(c);
        e["precision"] = m.precision;
        e["recall"] = m.recall;
        e["f1"] = m.f1;
        e["support"] = m.support;
        per.push_back(std::move(e));
    }
    j["per_class"] = std::move(per);
    return j;
}

std::string format_comparison_table(std::span<const ComparisonRow> rows) {
    using detail::fixed;
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"Model", "Modality", "Accuracy", "Recall", "Precision", "SW-F1", "MCC", "Clipscore",
                     "Recall(macro)", "Precision(macro)", "F1(macro)"});
    for (const auto& row : rows) {
        const auto& r = row.report;
        cells.push_back({row.model, row.modality, fixed(r.accuracy), fixed(r.recall_weighted),
                         fixed(r.precision_weighted), fixed(r.f1_weighted), fixed(r.mcc),
                         row.clip_score ? fixed(*row.clip_score) : "-", fixed(r.recall_macro),
                         fixed(r.precision_macro), fixed(r.f1_macro)});
    }
    return detail::format_table(cells);
}

}  // namespace darb
