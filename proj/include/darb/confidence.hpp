#pragma once
// Error triage by confidence margin.
//
// For a misclassified sample the margin is p(predicted) - p(truth). Large
// margins are overconfident errors, near-zero margins are ambiguous ones.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darb/core.hpp"
#include "darb/interchange.hpp"

namespace darb {

enum class Triage : std::uint8_t { Overconfident = 0, Medium = 1, Ambiguous = 2 };
inline constexpr std::size_t kNumTriage = 3;
std::string_view to_string(Triage t) noexcept;

struct TriageThresholds {
    double m_hi = 0.5;
    double m_lo = 0.1;

    // Throws ValidationError unless 0 <= m_lo < m_hi <= 1.
    void validate() const;
};

struct MarginCore {
    Severity predicted;
    Severity truth;
    double margin;
};

struct MarginRecord {
    std::string id;
    Severity predicted;
    Severity truth;
    double margin;
    Triage triage;
};

// nullopt when the prediction is correct.
std::optional<MarginCore> margin(const ProbTriple& pred, Severity truth) noexcept;

// Overconfident iff margin >= m_hi; Ambiguous iff margin <= m_lo; else Medium.
Triage triage(double margin, const TriageThresholds& th) noexcept;

// Margin records for every misclassified sample, in input order.
std::vector<MarginRecord> collect_errors(std::span<const std::string> ids, std::span<const ProbTriple> preds,
                                         std::span<const Severity> truth, const TriageThresholds& th);

struct ProfileReport {
    std::size_t num_errors = 0;
    bool no_errors = true;
    std::array<std::size_t, kNumTriage> triage_counts{};
    std::array<double, kNumTriage> triage_pct{};        // percent of errors
    std::array<std::size_t, kNumClasses> truth_counts{};
    std::array<double, kNumClasses> truth_pct{};        // "Mild Mis", "Moderate Mis", "Severe Mis"
};

ProfileReport profile(std::span<const MarginRecord> errors);

Json profile_to_json(const ProfileReport& r);

struct ProfileRow {
    std::string model;
    std::string modality;
    ProfileReport report;
};

// Columns: Model, Modality, Overconfident, Medium, Ambiguous, Mild Mis, Moderate Mis, Severe Mis.
std::string format_profile_table(std::span<const ProfileRow> rows);

}  // namespace darb
