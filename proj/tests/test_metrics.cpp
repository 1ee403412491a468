#include <doctest.h>

#include <numeric>

#include "darb/metrics.hpp"
#include "support/gen.hpp"
#include "support/oracles.hpp"

using namespace darb;

namespace {

ConfusionMatrix from_labels(const std::vector<int>& t, const std::vector<int>& p, int k) {
    std::vector<std::size_t> a(t.begin(), t.end()), b(p.begin(), p.end());
    return confusion(a, b, static_cast<std::size_t>(k));
}

// Expands a count matrix into label sequences.
void expand(const std::vector<std::vector<std::uint64_t>>& c, std::vector<int>& t, std::vector<int>& p) {
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = 0; j < c.size(); ++j) {
            for (std::uint64_t n = 0; n < c[i][j]; ++n) {
                t.push_back(static_cast<int>(i));
                p.push_back(static_cast<int>(j));
            }
        }
    }
}

void check_against_oracle(const MetricReport& r, const oracle::Metrics& o, double tol) {
    CHECK(std::abs(r.accuracy - o.accuracy) <= tol);
    CHECK(std::abs(r.precision_weighted - o.precision_w) <= tol);
    CHECK(std::abs(r.recall_weighted - o.recall_w) <= tol);
    CHECK(std::abs(r.f1_weighted - o.f1_w) <= tol);
    CHECK(std::abs(r.precision_macro - o.precision_m) <= tol);
    CHECK(std::abs(r.recall_macro - o.recall_m) <= tol);
    CHECK(std::abs(r.f1_macro - o.f1_m) <= tol);
    CHECK(std::abs(r.mcc - o.mcc) <= tol);
    REQUIRE(r.per_class.size() == o.per_class.size());
    for (std::size_t c = 0; c < o.per_class.size(); ++c) {
        CHECK(std::abs(r.per_class[c].precision - o.per_class[c].precision) <= tol);
        CHECK(std::abs(r.per_class[c].recall - o.per_class[c].recall) <= tol);
        CHECK(std::abs(r.per_class[c].f1 - o.per_class[c].f1) <= tol);
        CHECK(static_cast<double>(r.per_class[c].support) == o.per_class[c].support);
    }
}

}  // namespace

TEST_CASE("confusion counts") {
    const std::vector<Severity> t{Severity::Mild, Severity::Moderate, Severity::Severe, Severity::Mild,
                                  Severity::Severe};
    const auto cm = confusion(t, t);
    CHECK(cm.trace() == 5);
    CHECK(cm.total() == 5);
    CHECK(cm.at(0, 0) == 2);

    const std::vector<Severity> tt{Severity::Moderate, Severity::Moderate, Severity::Severe};
    const std::vector<Severity> pp{Severity::Severe, Severity::Severe, Severity::Moderate};
    const auto z = confusion(tt, pp);
    CHECK(z.trace() == 0);
    CHECK(z.at(1, 2) == 2);
    CHECK(z.at(2, 1) == 1);

    const std::vector<Severity> shorter{Severity::Mild};
    CHECK_THROWS_AS(confusion(tt, shorter), ValidationError);
    CHECK_THROWS_AS(evaluate(ConfusionMatrix(3)), ValidationError);
}

TEST_CASE("confusion matches a counting oracle on 1000 samples") {
    darb::Rng rng(1);
    const auto t = gen::labels(rng, 1000, 3);
    const auto p = gen::labels(rng, 1000, 3);
    const auto cm = from_labels(t, p, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            std::uint64_t n = 0;
            for (std::size_t s = 0; s < t.size(); ++s) n += t[s] == i && p[s] == j;
            CHECK(cm.at(i, j) == n);
        }
    }
    CHECK(cm.total() == 1000);
}

TEST_CASE("perfect predictions score 1 everywhere") {
    const ConfusionMatrix cm({{4, 0, 0}, {0, 7, 0}, {0, 0, 2}});
    const auto r = evaluate(cm);
    CHECK(r.accuracy == 1.0);
    CHECK(r.recall_weighted == 1.0);
    CHECK(r.precision_weighted == 1.0);
    CHECK(r.f1_weighted == 1.0);
    CHECK(r.f1_macro == 1.0);
    CHECK(r.mcc == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("constant predictor has MCC 0") {
    const ConfusionMatrix cm({{0, 10, 0}, {0, 20, 0}, {0, 5, 0}});
    const auto r = evaluate(cm);
    CHECK(r.mcc == 0.0);
    CHECK(r.accuracy == doctest::Approx(20.0 / 35.0));
    CHECK(r.per_class[0].precision == 0.0);
    CHECK(r.per_class[0].f1 == 0.0);
}

TEST_CASE("worked confusion matrix against a one-vs-rest hand tally") {
    const std::vector<std::vector<std::uint64_t>> c{{50, 8, 2}, {10, 70, 20}, {5, 15, 60}};
    const auto r = evaluate(ConfusionMatrix(c));
    CHECK(r.accuracy == 0.75);
    CHECK(r.recall_weighted == doctest::Approx(0.75).epsilon(1e-15));
    // Class 0: tp 50, fp 15, fn 10.
    CHECK(r.per_class[0].precision == doctest::Approx(50.0 / 65.0).epsilon(1e-15));
    CHECK(r.per_class[0].recall == doctest::Approx(50.0 / 60.0).epsilon(1e-15));
    CHECK(r.per_class[2].precision == doctest::Approx(60.0 / 82.0).epsilon(1e-15));
    std::vector<int> t, p;
    expand(c, t, p);
    check_against_oracle(r, oracle::metrics(t, p, 3), 1e-12);
}

TEST_CASE("random label sets match the brute-force oracle") {
    darb::Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(800);
        const auto t = gen::labels(rng, n, 3);
        const auto p = gen::noisy_copy(rng, t, 3, rng.uniform());
        CAPTURE(trial);
        check_against_oracle(evaluate(from_labels(t, p, 3)), oracle::metrics(t, p, 3), 1e-12);
    }
}

TEST_CASE("weighted recall equals accuracy exactly") {
    darb::Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::vector<std::uint64_t>> c(3, std::vector<std::uint64_t>(3));
        for (auto& row : c) {
            for (auto& v : row) v = rng.below(rng.uniform() < 0.2 ? 2 : 500);
        }
        c[rng.below(3)][rng.below(3)] += 1;
        const auto r = evaluate(ConfusionMatrix(c));
        CHECK(r.recall_weighted == r.accuracy);
    }
}

TEST_CASE("2x2 multiclass MCC equals the binary formula") {
    darb::Rng rng(6);
    for (int trial = 0; trial < 1000; ++trial) {
        const double tn = static_cast<double>(rng.below(300));
        const double fp = static_cast<double>(rng.below(300));
        const double fn = static_cast<double>(rng.below(300));
        const double tp = static_cast<double>(1 + rng.below(300));
        const ConfusionMatrix cm({{static_cast<std::uint64_t>(tn), static_cast<std::uint64_t>(fp)},
                                  {static_cast<std::uint64_t>(fn), static_cast<std::uint64_t>(tp)}});
        CHECK(std::abs(matthews(cm) - oracle::binary_mcc(tp, tn, fp, fn)) <= 1e-12);
    }
    // Degenerate column gives 0 under both conventions.
    const ConfusionMatrix flat({{5, 0}, {7, 0}});
    CHECK(matthews(flat) == 0.0);
}

TEST_CASE("metrics are invariant under a joint class relabeling") {
    darb::Rng rng(7);
    const std::array<std::array<int, 3>, 5> perms{{{0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 5 + rng.below(400);
        const auto t = gen::labels(rng, n, 3);
        const auto p = gen::noisy_copy(rng, t, 3, 0.6);
        const auto base = evaluate(from_labels(t, p, 3));
        for (const auto& pi : perms) {
            std::vector<int> t2(n), p2(n);
            for (std::size_t i = 0; i < n; ++i) {
                t2[i] = pi[t[i]];
                p2[i] = pi[p[i]];
            }
            const auto r = evaluate(from_labels(t2, p2, 3));
            CHECK(r.accuracy == base.accuracy);
            CHECK(std::abs(r.f1_macro - base.f1_macro) <= 1e-12);
            CHECK(std::abs(r.recall_macro - base.recall_macro) <= 1e-12);
            CHECK(std::abs(r.precision_macro - base.precision_macro) <= 1e-12);
            CHECK(std::abs(r.f1_weighted - base.f1_weighted) <= 1e-12);
            CHECK(std::abs(r.mcc - base.mcc) <= 1e-12);
        }
    }
}

TEST_CASE("rates stay in range") {
    darb::Rng rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(60);
        const auto t = gen::labels(rng, n, 3);
        const auto p = gen::labels(rng, n, 3);
        const auto r = evaluate(from_labels(t, p, 3));
        for (double v : {r.accuracy, r.recall_weighted, r.recall_macro, r.precision_weighted, r.precision_macro,
                         r.f1_weighted, r.f1_macro}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(r.mcc >= -1.0 - 1e-12);
        CHECK(r.mcc <= 1.0 + 1e-12);
    }
}

TEST_CASE("CLIPScore: cosine per pair, mean over a corpus") {
    const std::vector<float> a{1, 0, 0}, b{0, 1, 0}, c{2, 0, 0};
    CHECK(clip_score(a, c) == 1.0);
    CHECK(clip_score(a, b) == 0.0);
    const std::vector<float> two{1, 0};
    CHECK_THROWS_AS(clip_score(a, two), ValidationError);

    darb::Rng rng(3);
    std::vector<std::vector<float>> img(40, std::vector<float>(12)), txt(40, std::vector<float>(12));
    for (auto& v : img) {
        for (auto& x : v) x = static_cast<float>(rng.normal());
    }
    for (auto& v : txt) {
        for (auto& x : v) x = static_cast<float>(rng.normal());
    }
    std::vector<std::pair<std::span<const float>, std::span<const float>>> pairs;
    double expected = 0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        pairs.emplace_back(img[i], txt[i]);
        std::vector<double> x(img[i].begin(), img[i].end()), y(txt[i].begin(), txt[i].end());
        expected += oracle::cosine(x, y);
    }
    expected /= static_cast<double>(img.size());
    CHECK(std::abs(corpus_clip_score(pairs) - expected) <= 1e-12);

    // Rescaling either side by a positive constant leaves each score unchanged.
    for (std::size_t i = 0; i < img.size(); ++i) {
        auto scaled = img[i];
        for (auto& x : scaled) x *= 4.0f;
        CHECK(std::abs(clip_score(scaled, txt[i]) - clip_score(img[i], txt[i])) <= 1e-6);
    }
}

TEST_CASE("comparison table layout") {
    ComparisonRow row{"fused", "image+text", evaluate(ConfusionMatrix({{5, 1, 0}, {1, 5, 0}, {0, 0, 4}})), 0.2467};
    ComparisonRow row2{"image_only", "image", evaluate(ConfusionMatrix({{3, 3, 0}, {1, 5, 0}, {0, 1, 3}})),
                       std::nullopt};
    const std::vector<ComparisonRow> rows{row, row2};
    const auto table = format_comparison_table(rows);
    for (const char* col : {"Model", "Modality", "Accuracy", "Recall", "Precision", "SW-F1", "MCC", "Clipscore"}) {
        CHECK(table.find(col) != std::string::npos);
    }
    CHECK(table.find("0.2467") != std::string::npos);
    CHECK(table.find("image_only") != std::string::npos);

    const auto j = report_to_json(row.report);
    CHECK(j.at("accuracy").get<double>() == doctest::Approx(14.0 / 16.0));
    CHECK(confusion_to_json(ConfusionMatrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}))[1][2] == 6);
}
