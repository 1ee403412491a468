#pragma once
// Domain types and math primitives shared by every module.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "darb/error.hpp"

namespace darb {

inline constexpr std::size_t kNumClasses = 3;

// Ordering is fixed: argmax ties resolve toward the lower value.
enum class Severity : std::uint8_t { Mild = 0, Moderate = 1, Severe = 2 };

inline constexpr std::array<Severity, kNumClasses> kAllSeverities = {
    Severity::Mild, Severity::Moderate, Severity::Severe};

constexpr std::size_t index_of(Severity s) noexcept { return static_cast<std::size_t>(s); }
Severity severity_from_index(std::size_t i);

std::string_view to_string(Severity s) noexcept;
// Accepts "mild" / "moderate" / "severe"; throws ValidationError otherwise.
Severity parse_severity(std::string_view text);

// A 3-class probability distribution. Always stored normalized so that
// (p[0] + p[1]) + p[2] == 1.0 exactly in double arithmetic.
class ProbTriple {
public:
    static constexpr double kSumTolerance = 1e-5;

    // Uniform distribution; three equal thirds already sum to exactly 1.
    ProbTriple() noexcept : p_{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0} {}

    // Checks components are finite, in [0, 1] and sum to 1 within
    // kSumTolerance, then renormalizes. Throws ValidationError.
    static ProbTriple from_raw(double mild, double moderate, double severe);
    static ProbTriple from_raw(std::span<const double> p);

    double operator[](std::size_t i) const noexcept { return p_[i]; }
    double operator[](Severity s) const noexcept { return p_[index_of(s)]; }
    const std::array<double, kNumClasses>& values() const noexcept { return p_; }

    friend bool operator==(const ProbTriple&, const ProbTriple&) = default;

private:
    explicit ProbTriple(std::array<double, kNumClasses> p) noexcept : p_(p) {}
    std::array<double, kNumClasses> p_;
};

struct Sample {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    Severity label = Severity::Mild;
    std::optional<std::string> caption_human;
    std::optional<std::string> caption_llm;
    std::optional<std::string> image;
    std::size_t row = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

// Numerically stable softmax (max-subtracted). Requires >= 2 finite logits.
std::vector<double> softmax(std::span<const double> logits);
ProbTriple softmax3(std::span<const double, kNumClasses> logits);

// Shannon entropy in nats, with 0 ln 0 := 0.
double entropy(const ProbTriple& p) noexcept;

// Cosine similarity. Throws on dimension mismatch or a zero-norm argument.
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const double> a, std::span<const double> b);

// Class of maximal probability; ties go to the lowest class index.
Severity argmax_class(const ProbTriple& p) noexcept;

// Largest component, i.e. the model's confidence in its own prediction.
double max_prob(const ProbTriple& p) noexcept;

}  // namespace darb
