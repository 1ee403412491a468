#pragma once
// Hand-rolled random generators for property tests.

#include <filesystem>
#include <string>
#include <vector>

#include "darb/core.hpp"
#include "darb/fusion.hpp"
#include "darb/interchange.hpp"
#include "darb/rng.hpp"

namespace gen {

inline std::vector<int> labels(darb::Rng& rng, std::size_t n, int k) {
    std::vector<int> out(n);
    for (auto& v : out) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    return out;
}

// Predictions that copy the truth with probability `keep`, otherwise uniform.
inline std::vector<int> noisy_copy(darb::Rng& rng, const std::vector<int>& truth, int k, double keep) {
    std::vector<int> out(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        out[i] = rng.uniform() < keep ? truth[i] : static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    }
    return out;
}

inline std::vector<darb::Severity> severities(const std::vector<int>& v) {
    std::vector<darb::Severity> out;
    for (int x : v) out.push_back(darb::severity_from_index(static_cast<std::size_t>(x)));
    return out;
}

inline darb::Mat gaussian(darb::Rng& rng, std::size_t rows, std::size_t cols, double sd = 1.0) {
    darb::Mat m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = sd * rng.normal();
    }
    return m;
}

inline std::vector<std::vector<double>> to_nested(const darb::Mat& m) {
    std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
    }
    return out;
}

inline std::vector<double> row_of(const darb::Mat& m, Eigen::Index r) {
    std::vector<double> out(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] = m(r, c);
    return out;
}

// Small fusion problem with a non-trivial head so every gradient entry is exercised.
struct FusionInstance {
    darb::FusionParams params;
    darb::Mat x_img;
    darb::Mat x_txt;
    std::vector<darb::Severity> labels;
};

inline FusionInstance fusion_instance(darb::Rng& rng, darb::FusionMode mode) {
    FusionInstance f;
    const std::size_t n = 2 + rng.below(7);       // 2..8
    const std::size_t d_img = 2 + rng.below(15);  // 2..16
    const std::size_t d_txt = 2 + rng.below(15);
    const std::size_t d_proj = 2 + rng.below(7);
    f.params = darb::FusionParams::init(d_img, d_txt, d_proj, mode, rng.next_u64());
    f.params.w_head = gaussian(rng, 3, 2 * d_proj, 0.5);
    for (Eigen::Index i = 0; i < 3; ++i) f.params.b_head(i) = 0.1 * rng.normal();
    f.x_img = gaussian(rng, n, d_img);
    f.x_txt = gaussian(rng, n, d_txt);
    for (std::size_t i = 0; i < n; ++i) f.labels.push_back(darb::severity_from_index(rng.below(3)));
    return f;
}

// Manifest with the requested class counts, ids "g00000".., shuffled label order.
inline darb::Manifest manifest(darb::Rng& rng, std::array<std::size_t, 3> counts) {
    std::vector<darb::Severity> labels;
    for (std::size_t c = 0; c < 3; ++c) labels.insert(labels.end(), counts[c], darb::severity_from_index(c));
    rng.shuffle(std::span<darb::Severity>(labels));
    std::vector<darb::Sample> samples;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        darb::Sample s;
        char buf[32];
        std::snprintf(buf, sizeof buf, "g%05zu", i);
        s.id = buf;
        s.lat = rng.uniform(-89.0, 89.0);
        s.lon = rng.uniform(-179.0, 179.0);
        s.label = labels[i];
        s.row = i;
        samples.push_back(std::move(s));
    }
    return darb::make_manifest(std::move(samples));
}

// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("darb_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace gen
