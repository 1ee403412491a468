#include <doctest.h>

#include <cmath>
#include <cstring>

#include "darb/fusion.hpp"
#include "darb/metrics.hpp"
#include "darb/synth.hpp"
#include "support/gen.hpp"
#include "support/oracles.hpp"

using namespace darb;

namespace {

Mat sim_matrix(const std::vector<std::vector<double>>& s) {
    Mat m(s.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) m(i, j) = s[i][j];
    }
    return m;
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), 0);
    return r;
}

bool same_bits(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

TrainConfig quick_config(FusionMode mode) {
    TrainConfig c;
    c.mode = mode;
    c.lr = 1e-2;
    c.epochs = 10;
    c.d_proj = 8;
    c.batch_size = 16;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("InfoNCE closed forms") {
    CHECK(info_nce_from_similarity(sim_matrix({{0.3}}), 0.07) == 0.0);
    for (std::size_t n : {2u, 4u, 8u}) {
        const auto s = std::vector<std::vector<double>>(n, std::vector<double>(n, 0.42));
        CHECK(std::abs(info_nce_from_similarity(sim_matrix(s), 0.07) - std::log(static_cast<double>(n))) <= 1e-10);
    }
    CHECK(info_nce_from_similarity(sim_matrix({{0.5, 0.5, 0.5, 0.5},
                                               {0.5, 0.5, 0.5, 0.5},
                                               {0.5, 0.5, 0.5, 0.5},
                                               {0.5, 0.5, 0.5, 0.5}}),
                                   1.0) == doctest::Approx(1.386294).epsilon(1e-6));
    const double two = info_nce_from_similarity(sim_matrix({{1, 0}, {0, 1}}), 1.0);
    CHECK(two == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
    CHECK(two == doctest::Approx(0.313262).epsilon(1e-6));
    CHECK_THROWS_AS(info_nce_from_similarity(sim_matrix({{1, 0}, {0, 1}}), 0.0), ValidationError);
    CHECK_THROWS_AS(info_nce_from_similarity(sim_matrix({{1, 0}, {0, 1}}), -1.0), ValidationError);
}

TEST_CASE("InfoNCE on projections matches the definition and is non-negative") {
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.below(8), d = 2 + rng.below(10);
        Mat a = gen::gaussian(rng, n, d), b = gen::gaussian(rng, n, d);
        std::vector<std::vector<double>> s(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) s[i][j] = oracle::cosine(gen::row_of(a, i), gen::row_of(b, j));
        }
        a.rowwise().normalize();
        b.rowwise().normalize();
        const double tau = rng.uniform(0.05, 2.0);
        const double got = info_nce(a, b, tau);
        CHECK(got >= 0.0);
        CHECK(std::abs(got - oracle::info_nce(s, tau)) <= 1e-10 * std::max(1.0, got));
    }
}

TEST_CASE("classification loss examples") {
    const std::vector<ProbTriple> hot{ProbTriple::from_raw(1, 0, 0), ProbTriple::from_raw(0, 0, 1)};
    const std::vector<Severity> ht{Severity::Mild, Severity::Severe};
    CHECK(cls_loss(hot, ht) == 0.0);

    const std::vector<ProbTriple> uni(5, ProbTriple());
    const std::vector<Severity> ut(5, Severity::Moderate);
    CHECK(cls_loss(uni, ut) == doctest::Approx(std::log(3.0)).epsilon(1e-15));

    const std::vector<ProbTriple> two{ProbTriple::from_raw(0.5, 0.25, 0.25), ProbTriple::from_raw(0.5, 0.25, 0.25)};
    const std::vector<Severity> tt{Severity::Mild, Severity::Moderate};
    CHECK(cls_loss(two, tt) == doctest::Approx(1.039721).epsilon(1e-6));

    std::size_t clamped = 0;
    const std::vector<ProbTriple> zero{ProbTriple::from_raw(1, 0, 0)};
    const std::vector<Severity> zt{Severity::Severe};
    CHECK(cls_loss(zero, zt, &clamped) == doctest::Approx(-std::log(kProbFloor)));
    CHECK(clamped == 1);
    CHECK_THROWS_AS(cls_loss({}, {}), ValidationError);
}

TEST_CASE("total loss is the lambda mix") {
    CHECK(total_loss(0.4, 0.8, 0.0) == 0.8);
    CHECK(total_loss(0.4, 0.8, 1.0) == 0.4);
    CHECK(total_loss(0.4, 0.8, 0.5) == doctest::Approx(0.6).epsilon(1e-15));
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const double c = rng.uniform(0, 5), k = rng.uniform(0, 5);
        const double l1 = rng.uniform(), l2 = rng.uniform(), w = rng.uniform();
        const double mid = total_loss(c, k, w * l1 + (1 - w) * l2);
        CHECK(mid == doctest::Approx(w * total_loss(c, k, l1) + (1 - w) * total_loss(c, k, l2)).epsilon(1e-12));
    }
}

TEST_CASE("train config validation and unimodal lambda") {
    TrainConfig c;
    CHECK(c.lr == 1e-4);
    CHECK(c.batch_size == 32);
    CHECK(c.epochs == 10);
    CHECK(c.lambda_mix == 0.5);
    CHECK(c.tau_contrast == 0.07);
    CHECK(c.d_proj == 128);
    CHECK(c.effective_lambda() == 0.5);
    c.mode = FusionMode::ImageOnly;
    CHECK(c.effective_lambda() == 0.0);
    c.mode = FusionMode::TextOnly;
    CHECK(c.effective_lambda() == 0.0);
    CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
    for (auto bad : {Json{{"lambda_mix", 1.5}}, Json{{"tau_contrast", 0}}, Json{{"lr", -1}}, Json{{"batch_size", 0}},
                     Json{{"epochs", 0}}, Json{{"weight_decay", -0.1}}}) {
        CHECK_THROWS_AS(TrainConfig::from_json(bad), ValidationError);
    }
    CHECK(parse_fusion_mode("text_only") == FusionMode::TextOnly);
    CHECK_THROWS_AS(parse_fusion_mode("late"), ValidationError);
}

TEST_CASE("forward pass matches a hand-rolled oracle") {
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        const auto mode = static_cast<FusionMode>(rng.below(3));
        auto f = gen::fusion_instance(rng, mode);
        const bool ui = mode != FusionMode::TextOnly, ut = mode != FusionMode::ImageOnly;
        for (Eigen::Index r = 0; r < f.x_img.rows(); ++r) {
            const auto xi = gen::row_of(f.x_img, r), xt = gen::row_of(f.x_txt, r);
            const std::vector<float> fi(xi.begin(), xi.end()), ft(xt.begin(), xt.end());
            // The oracle sees the same float-rounded inputs.
            const std::vector<double> di(fi.begin(), fi.end()), dt(ft.begin(), ft.end());
            const auto want = oracle::fusion_forward(gen::to_nested(f.params.w_img), gen::to_nested(f.params.w_txt),
                                                     gen::to_nested(f.params.w_head),
                                                     std::vector<double>(f.params.b_head.data(),
                                                                         f.params.b_head.data() + 3),
                                                     di, dt, ui, ut);
            const auto got = predict_proba(f.params, ui ? std::span<const float>(fi) : std::span<const float>(),
                                           ut ? std::span<const float>(ft) : std::span<const float>());
            for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(got[c] - want[c]) <= 1e-10);
            CHECK((got[0] + got[1]) + got[2] == 1.0);
        }
    }
}

TEST_CASE("zero head gives the uniform distribution; shape errors are reported") {
    auto p = FusionParams::init(5, 7, 4, FusionMode::Fused, 1);
    p.w_head.setZero();
    const std::vector<float> x{1, 2, 3, 4, 5}, t{1, 0, 0, 0, 0, 0, 1};
    const auto q = predict_proba(p, x, t);
    for (std::size_t c = 0; c < 3; ++c) CHECK(q[c] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const std::vector<float> wrong{1, 2};
    CHECK_THROWS_AS(predict_proba(p, wrong, t), ValidationError);
    // Adding the same constant to every bias entry is a softmax shift.
    auto shifted = p;
    shifted.w_head = gen::gaussian(*std::make_unique<Rng>(9), 3, 8);
    auto base = shifted;
    shifted.b_head.array() += 3.7;
    const auto a = predict_proba(base, x, t), b = predict_proba(shifted, x, t);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(a[c] - b[c]) <= 1e-12);
}

TEST_CASE("analytic gradients match central differences") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        for (double lambda : {0.0, 0.5, 1.0}) {
            auto f = gen::fusion_instance(rng, FusionMode::Fused);
            const double tau = rng.uniform(0.1, 1.0);
            const auto gc = gradient_check(f.params, f.x_img, f.x_txt, f.labels, lambda, tau);
            CAPTURE(lambda);
            CHECK(gc.max_rel_error < 1e-5);
            CHECK(gc.parameters == static_cast<std::size_t>(f.params.w_img.size() + f.params.w_txt.size() +
                                                            f.params.w_head.size() + 3));
        }
        for (auto mode : {FusionMode::ImageOnly, FusionMode::TextOnly}) {
            auto f = gen::fusion_instance(rng, mode);
            CHECK(gradient_check(f.params, mode == FusionMode::TextOnly ? Mat() : f.x_img,
                                 mode == FusionMode::ImageOnly ? Mat() : f.x_txt, f.labels, 0.0, 0.5)
                      .max_rel_error < 1e-5);
        }
    }
}

TEST_CASE("training separates well-separated classes in image-only mode") {
    synth::DatasetOptions opt;
    opt.class_counts = {60, 60, 60};
    opt.dim = 16;
    opt.separation = 6.0;
    opt.noise = 0.5;
    opt.seed = 21;
    const auto ds = synth::make_dataset(opt);
    const auto rows = all_rows(ds.manifest.size());
    const auto labels = ds.manifest.labels();
    const auto r = train(ds.image, ds.text, rows, labels, quick_config(FusionMode::ImageOnly));
    REQUIRE(r.log.size() == 10);
    CHECK(r.log.back().mean_loss <= r.log.front().mean_loss);
    for (const auto& e : r.log) CHECK(e.mean_contrast == 0.0);
    const auto preds = predict_rows(r.params, ds.image, ds.text, rows);
    std::vector<Severity> hat;
    for (const auto& p : preds) hat.push_back(argmax_class(p));
    CHECK(evaluate(confusion(labels, hat)).accuracy >= 0.99);
}

TEST_CASE("fused training: lambda zero is classification only, runs are seed-deterministic") {
    synth::DatasetOptions opt;
    opt.class_counts = {20, 25, 15};
    opt.seed = 8;
    const auto ds = synth::make_dataset(opt);
    const auto rows = all_rows(ds.manifest.size());
    const auto labels = ds.manifest.labels();

    auto cfg = quick_config(FusionMode::Fused);
    cfg.lambda_mix = 0.0;
    const auto zero = train(ds.image, ds.text, rows, labels, cfg);
    for (const auto& e : zero.log) CHECK(std::abs(e.mean_loss - e.mean_cls) <= 1e-10);

    cfg.lambda_mix = 0.5;
    const auto a = train(ds.image, ds.text, rows, labels, cfg);
    const auto b = train(ds.image, ds.text, rows, labels, cfg);
    CHECK(same_bits(a.params.w_img, b.params.w_img));
    CHECK(same_bits(a.params.w_txt, b.params.w_txt));
    CHECK(same_bits(a.params.w_head, b.params.w_head));
    CHECK(std::memcmp(a.params.b_head.data(), b.params.b_head.data(), 3 * sizeof(double)) == 0);
    CHECK(training_log_jsonl(a) == training_log_jsonl(b));
    CHECK(a.log.back().mean_loss <= a.log.front().mean_loss);
    for (const auto& e : a.log) CHECK(e.mean_contrast > 0.0);

    cfg.seed = 4;
    const auto c = train(ds.image, ds.text, rows, labels, cfg);
    CHECK_FALSE(same_bits(a.params.w_head, c.params.w_head));
}

TEST_CASE("non-finite loss aborts with epoch and batch") {
    synth::DatasetOptions opt;
    opt.seed = 2;
    const auto ds = synth::make_dataset(opt);
    auto cfg = quick_config(FusionMode::Fused);
    cfg.lr = 1e300;
    cfg.batch_size = 4;
    try {
        train(ds.image, ds.text, all_rows(ds.manifest.size()), ds.manifest.labels(), cfg);
        FAIL("expected training to abort");
    } catch (const ValidationError&) {
        FAIL("wrong error type");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("non-finite loss at epoch 1, batch ") == 0);
    }
}

TEST_CASE("parameter files round-trip bit-identically") {
    Rng rng(6);
    for (auto mode : {FusionMode::ImageOnly, FusionMode::TextOnly, FusionMode::Fused}) {
        auto f = gen::fusion_instance(rng, mode);
        const auto bytes = encode_params(f.params);
        const auto back = decode_params(bytes);
        CHECK(back.mode == mode);
        CHECK(same_bits(back.w_img, f.params.w_img));
        CHECK(same_bits(back.w_txt, f.params.w_txt));
        CHECK(same_bits(back.w_head, f.params.w_head));
        CHECK(encode_params(back) == bytes);
        auto cut = bytes;
        cut.pop_back();
        CHECK_THROWS_AS(decode_params(cut), ValidationError);
        auto magic = bytes;
        magic[3] = 'X';
        CHECK_THROWS_AS(decode_params(magic), ValidationError);
    }
    const auto dir = gen::scratch("params");
    auto f = gen::fusion_instance(rng, FusionMode::Fused);
    write_params(f.params, dir / "p.darp");
    CHECK(encode_params(read_params(dir / "p.darp")) == encode_params(f.params));
}
