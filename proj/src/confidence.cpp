#include "darb/confidence.hpp"

#include "text_table.hpp"

namespace darb {

std::string_view to_string(Triage t) noexcept {
    switch (t) {
        case Triage::Overconfident: return "overconfident";
        case Triage::Medium: return "medium";
        case Triage::Ambiguous: return "ambiguous";
    }
    return "unknown";
}

void TriageThresholds::validate() const {
    if (!(m_lo >= 0.0 && m_lo < m_hi && m_hi <= 1.0)) {
        throw ValidationError("triage thresholds must satisfy 0 <= m_lo < m_hi <= 1");
    }
}

std::optional<MarginCore> margin(const ProbTriple& pred, Severity truth) noexcept {
    const Severity top = argmax_class(pred);
    if (top == truth) return std::nullopt;
    return MarginCore{top, truth, pred[top] - pred[truth]};
}

Triage triage(double m, const TriageThresholds& th) noexcept {
    if (m >= th.m_hi) return Triage::Overconfident;
    if (m <= th.m_lo) return Triage::Ambiguous;
    return Triage::Medium;
}

std::vector<MarginRecord> collect_errors(std::span<const std::string> ids, std::span<const ProbTriple> preds,
                                         std::span<const Severity> truth, const TriageThresholds& th) {
    if (ids.size() != preds.size() || preds.size() != truth.size()) {
        throw ValidationError("collect_errors: input lengths differ");
    }
    th.validate();
    std::vector<MarginRecord> out;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (auto m = margin(preds[i], truth[i])) {
            out.push_back({ids[i], m->predicted, m->truth, m->margin, triage(m->margin, th)});
        }
    }
    return out;
}

ProfileReport profile(std::span<const MarginRecord> errors) {
    ProfileReport r;
    r.num_errors = errors.size();
    r.no_errors = errors.empty();
    if (errors.empty()) return r;
    for (const auto& e : errors) {
        ++r.triage_counts[static_cast<std::size_t>(e.triage)];
        ++r.truth_counts[index_of(e.truth)];
    }
    const double n = static_cast<double>(errors.size());
    for (std::size_t i = 0; i < kNumTriage; ++i) r.triage_pct[i] = 100.0 * static_cast<double>(r.triage_counts[i]) / n;
    for (std::size_t i = 0; i < kNumClasses; ++i) r.truth_pct[i] = 100.0 * static_cast<double>(r.truth_counts[i]) / n;
    return r;
}

Json profile_to_json(const ProfileReport& r) {
    Json j;
    j["num_errors"] = r.num_errors;
    j["no_errors"] = r.no_errors;
    Json tri;
    for (std::size_t i = 0; i < kNumTriage; ++i) {
        const auto name = std::string(to_string(static_cast<Triage>(i)));
        tri[name] = {{"count", r.triage_counts[i]}, {"percent", r.triage_pct[i]}};
    }
    j["triage"] = std::move(tri);
    Json mis;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        const auto name = std::string(to_string(static_cast<Severity>(i)));
        mis[name] = {{"count", r.truth_counts[i]}, {"percent", r.truth_pct[i]}};
    }
    j["true_label"] = std::move(mis);
    return j;
}

std::string format_profile_table(std::span<const ProfileRow> rows) {
    using detail::percent;
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"Model", "Modality", "Overconfident", "Medium", "Ambiguous", "Mild Mis", "Moderate Mis",
                     "Severe Mis"});
    for (const auto& row : rows) {
        const auto& r = row.report;
        cells.push_back({row.model, row.modality, percent(r.triage_pct[0]), percent(r.triage_pct[1]),
                         percent(r.triage_pct[2]), percent(r.truth_pct[0]), percent(r.truth_pct[1]),
                         percent(r.truth_pct[2])});
    }
    return detail::format_table(cells);
}

}  // namespace darb
