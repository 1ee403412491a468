#include "darb/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace darb {

Severity severity_from_index(std::size_t i) {
    if (i >= kNumClasses) throw ValidationError("severity index out of range: " + std::to_string(i));
    return static_cast<Severity>(i);
}

std::string_view to_string(Severity s) noexcept {
    switch (s) {
        case Severity::Mild: return "mild";
        case Severity::Moderate: return "moderate";
        case Severity::Severe: return "severe";
    }
    return "unknown";
}

Severity parse_severity(std::string_view text) {
    if (text == "mild") return Severity::Mild;
    if (text == "moderate") return Severity::Moderate;
    if (text == "severe") return Severity::Severe;
    throw ValidationError("unknown severity label '" + std::string(text) + "'");
}

ProbTriple ProbTriple::from_raw(double mild, double moderate, double severe) {
    const std::array<double, kNumClasses> raw{mild, moderate, severe};
    return from_raw(raw);
}

ProbTriple ProbTriple::from_raw(std::span<const double> p) {
    if (p.size() != kNumClasses) throw ValidationError("probability vector must have 3 components");
    for (double v : p) {
        if (!std::isfinite(v)) throw ValidationError("non-finite probability");
        if (v < 0.0 || v > 1.0) {
            std::ostringstream os;
            os << "probability component " << v << " outside [0, 1]";
            throw ValidationError(os.str());
        }
    }
    const double sum = (p[0] + p[1]) + p[2];
    if (std::abs(sum - 1.0) > kSumTolerance) {
        std::ostringstream os;
        os << "probability sum " << sum;
        throw ValidationError(os.str());
    }
    if (sum == 1.0) return ProbTriple({p[0], p[1], p[2]});
    std::array<double, kNumClasses> q{p[0] / sum, p[1] / sum, p[2] / sum};
    if ((q[0] + q[1]) + q[2] == 1.0) return ProbTriple(q);
    // The stored sum is (q0 + q1) + q2, so q2 = 1 - (q0 + q1) makes it exact: the
    // subtraction errs by at most half an ulp of q2, which rounds away in the final add.
    const auto before = std::max_element(q.begin(), q.end()) - q.begin();
    for (int step = 0; step < 8; ++step) {
        const double head = q[0] + q[1];
        if (head <= 1.0) {
            std::array<double, kNumClasses> r{q[0], q[1], 1.0 - head};
            if ((r[0] + r[1]) + r[2] == 1.0 && std::max_element(r.begin(), r.end()) - r.begin() == before) {
                return ProbTriple(r);
            }
        }
        const std::size_t big = q[0] >= q[1] ? 0 : 1;
        q[big] = std::nextafter(q[big], 0.0);
    }
    throw ValidationError("probability vector could not be renormalized exactly");
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.size() < 2) throw ValidationError("softmax needs at least 2 logits");
    for (double v : logits) {
        if (!std::isfinite(v)) throw ValidationError("softmax: non-finite logit");
    }
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - hi);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

ProbTriple softmax3(std::span<const double, kNumClasses> logits) {
    const auto p = softmax(std::span<const double>(logits.data(), logits.size()));
    return ProbTriple::from_raw(p);
}

double entropy(const ProbTriple& p) noexcept {
    double h = 0.0;
    for (double v : p.values()) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return std::max(h, 0.0);
}

namespace {

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) {
        throw ValidationError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine: zero-norm vector");
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(c, -1.0, 1.0);
}

}  // namespace

double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

Severity argmax_class(const ProbTriple& p) noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumClasses; ++i) {
        if (p[i] > p[best]) best = i;
    }
    return static_cast<Severity>(best);
}

double max_prob(const ProbTriple& p) noexcept {
    return std::max({p[0], p[1], p[2]});
}

}  // namespace darb
