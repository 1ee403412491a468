#include <doctest.h>

#include <fstream>
#include <numeric>
#include <set>

#include "darb/cv.hpp"
#include "darb/synth.hpp"
#include "support/gen.hpp"

using namespace darb;

namespace {

std::vector<Severity> labels_with_counts(std::array<std::size_t, 3> counts) {
    std::vector<Severity> out;
    for (std::size_t c = 0; c < 3; ++c) out.insert(out.end(), counts[c], severity_from_index(c));
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Deterministic-label task: a fold "model" memorizes the majority label of its
// training side and predicts it everywhere.
FoldModel majority_model(const FoldAssignment& folds, std::span<const Severity> labels, std::size_t f) {
    FoldModel m;
    m.train_indices = folds.complement(f);
    std::array<std::size_t, 3> counts{};
    for (auto i : m.train_indices) ++counts[index_of(labels[i])];
    const auto best = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    m.predict = [best](std::span<const std::size_t> held) {
        std::array<double, 3> p{0.1, 0.1, 0.1};
        p[best] = 0.8;
        return std::vector<ProbTriple>(held.size(), ProbTriple::from_raw(p));
    };
    return m;
}

RunConfig small_run(const fs::path& dir) {
    RunConfig c;
    c.manifest = dir / "manifest.jsonl";
    c.image_embeddings = dir / "image.darb";
    c.text_embeddings = dir / "text.darb";
    c.prompts_dir = dir / "prompts";
    c.seed = 3;
    c.train.epochs = 3;
    c.train.batch_size = 8;
    c.train.d_proj = 8;
    return c;
}

}  // namespace

TEST_CASE("folds for 658/1196/702 hold 852 samples each") {
    const auto labels = labels_with_counts({658, 1196, 702});
    const auto fa = stratified_folds(labels, 3, 0);
    CHECK(fa.fold_sizes() == std::vector<std::size_t>{852, 852, 852});
    const auto cs = fa.class_sizes(labels);
    for (std::size_t c = 0; c < 3; ++c) {
        std::multiset<std::size_t> got{cs[0][c], cs[1][c], cs[2][c]};
        const std::array<std::multiset<std::size_t>, 3> expected{
            std::multiset<std::size_t>{220, 219, 219}, std::multiset<std::size_t>{399, 399, 398},
            std::multiset<std::size_t>{234, 234, 234}};
        CHECK(got == expected[c]);
    }
    CHECK(stratified_folds(labels, 3, 0).fold_of == fa.fold_of);
    CHECK(stratified_folds(labels, 3, 1).fold_of != fa.fold_of);
}

TEST_CASE("fold balance over 1000 seeds and random class distributions") {
    Rng rng(1);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const std::size_t k = 2 + rng.below(5);
        std::array<std::size_t, 3> counts{};
        for (auto& c : counts) c = k + rng.below(60);
        auto labels = labels_with_counts(counts);
        rng.shuffle(std::span<Severity>(labels));
        const auto fa = stratified_folds(labels, k, seed);
        REQUIRE(fa.fold_of.size() == labels.size());
        for (auto f : fa.fold_of) REQUIRE(f < k);
        const auto cs = fa.class_sizes(labels);
        for (std::size_t c = 0; c < 3; ++c) {
            std::size_t lo = SIZE_MAX, hi = 0, sum = 0;
            for (std::size_t f = 0; f < k; ++f) {
                lo = std::min(lo, cs[f][c]);
                hi = std::max(hi, cs[f][c]);
                sum += cs[f][c];
            }
            CHECK(hi - lo <= 1);
            CHECK(sum == counts[c]);
        }
        const auto sizes = fa.fold_sizes();
        CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
        std::size_t covered = 0;
        for (std::size_t f = 0; f < k; ++f) {
            const auto mem = fa.members(f), comp = fa.complement(f);
            covered += mem.size();
            CHECK(mem.size() + comp.size() == labels.size());
        }
        CHECK(covered == labels.size());
    }
}

TEST_CASE("fold preconditions and JSON round-trip") {
    CHECK_THROWS_AS(stratified_folds(labels_with_counts({5, 5, 5}), 1, 0), ValidationError);
    CHECK_THROWS_WITH_AS(stratified_folds(labels_with_counts({5, 2, 5}), 3, 0),
                         "class moderate has 2 samples, fewer than k = 3", ValidationError);
    Rng rng(2);
    const auto m = gen::manifest(rng, {7, 8, 9});
    const auto fa = stratified_folds(m, 3, 4);
    const auto back = FoldAssignment::from_json(fa.to_json(m), m);
    CHECK(back.fold_of == fa.fold_of);
    CHECK(back.k == 3);
    CHECK(back.seed == 4);
}

TEST_CASE("out-of-fold collection: coverage, leaks, missing models") {
    const auto labels = labels_with_counts({3, 3, 3});
    const auto fa = stratified_folds(labels, 3, 0);
    std::vector<FoldModel> models;
    for (std::size_t f = 0; f < 3; ++f) models.push_back(majority_model(fa, labels, f));
    const auto oof = collect_oof(fa, models);
    CHECK(oof.probs.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) CHECK(oof.fold[i] == fa.fold_of[i]);

    auto leaky = models;
    leaky[1].train_indices.push_back(fa.members(1).front());
    CHECK_THROWS_WITH_AS(collect_oof(fa, leaky), doctest::Contains("leak: fold 1"), Error);

    auto missing = models;
    missing[2].predict = nullptr;
    CHECK_THROWS_WITH_AS(collect_oof(fa, missing), "missing model for fold 2", Error);
    CHECK_THROWS_AS(collect_oof(fa, std::span<const FoldModel>(models).first(2)), ValidationError);

    auto short_model = models;
    short_model[0].predict = [](std::span<const std::size_t>) { return std::vector<ProbTriple>{}; };
    CHECK_THROWS_AS(collect_oof(fa, short_model), Error);
}

TEST_CASE("out-of-fold accuracy equals a per-fold recomputation") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::array<std::size_t, 3> counts{};
        for (auto& c : counts) c = 3 + rng.below(40);
        auto labels = labels_with_counts(counts);
        rng.shuffle(std::span<Severity>(labels));
        const auto fa = stratified_folds(labels, 3, trial);
        std::vector<FoldModel> models;
        for (std::size_t f = 0; f < 3; ++f) models.push_back(majority_model(fa, labels, f));
        const auto oof = collect_oof(fa, models);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax_class(oof.probs[i]) == labels[i];

        std::size_t brute = 0;
        for (std::size_t f = 0; f < 3; ++f) {
            std::array<std::size_t, 3> tally{};
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (fa.fold_of[i] != f) ++tally[index_of(labels[i])];
            }
            std::size_t best = 0;
            for (std::size_t c = 1; c < 3; ++c) {
                if (tally[c] > tally[best]) best = c;
            }
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (fa.fold_of[i] == f && index_of(labels[i]) == best) ++brute;
            }
        }
        CHECK(hits == brute);
    }
}

TEST_CASE("GeoJSON export: order, bounds and mode contracts") {
    Rng rng(4);
    const auto m = gen::manifest(rng, {10, 12, 8});
    const auto truth = m.labels();
    std::vector<ProbTriple> preds;
    for (std::size_t i = 0; i < m.size(); ++i) preds.push_back(synth::random_triple(rng));
    const auto recs = geo_records(preds, truth, "image_only", TriageThresholds{});
    const auto all = export_geojson(m, recs, GeoMode::All);
    CHECK(check_geojson(all).empty());
    REQUIRE(all.at("features").size() == m.size());
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& f = all.at("features")[i];
        CHECK(f.at("geometry").at("coordinates")[0].get<double>() == m.samples[i].lon);
        CHECK(f.at("geometry").at("coordinates")[1].get<double>() == m.samples[i].lat);
        const bool correct = argmax_class(preds[i]) == truth[i];
        CHECK(f.at("properties").at("correct").get<bool>() == correct);
        CHECK(f.at("properties").contains("margin") == !correct);
        CHECK(f.at("properties").contains("triage") == !correct);
        wrong += !correct;
    }
    const auto mis = export_geojson(m, recs, GeoMode::MisclassifiedOnly);
    CHECK(check_geojson(mis).empty());
    CHECK(mis.at("features").size() == wrong);
    for (const auto& f : mis.at("features")) CHECK_FALSE(f.at("properties").at("correct").get<bool>());

    std::vector<ProbTriple> perfect;
    for (auto s : truth) {
        std::array<double, 3> p{0.1, 0.1, 0.1};
        p[index_of(s)] = 0.8;
        perfect.push_back(ProbTriple::from_raw(p));
    }
    const auto none = export_geojson(m, geo_records(perfect, truth, "x", TriageThresholds{}), GeoMode::MisclassifiedOnly);
    CHECK(none.at("features").empty());
    CHECK(none.at("type") == "FeatureCollection");

    auto bad = m;
    bad.samples[5].lat = 91.0;
    CHECK_THROWS_WITH_AS(export_geojson(bad, recs, GeoMode::All), doctest::Contains(bad.samples[5].id.c_str()),
                         ValidationError);

    auto swapped = all;
    swapped["features"][0]["geometry"]["coordinates"] = {10.0, 120.0};
    CHECK_FALSE(check_geojson(swapped).empty());
    CHECK_FALSE(check_geojson(Json::array()).empty());
    CHECK(parse_geo_mode("misclassified") == GeoMode::MisclassifiedOnly);
    CHECK_THROWS_AS(parse_geo_mode("wrong"), ValidationError);
}

TEST_CASE("30-sample run writes a complete, reproducible run directory") {
    const auto dir = gen::scratch("cv_run");
    synth::DatasetOptions opt;
    opt.seed = 9;
    synth::write_dataset(synth::make_dataset(opt), dir / "data");
    const auto cfg = small_run(dir / "data");
    const auto run = run_experiment(cfg, dir / "run1");
    for (const char* f : {"config.json", "folds.json", "run_info.json", "predictions/image_only.jsonl",
                          "predictions/text_only.jsonl", "predictions/fused.jsonl", "predictions/arbitrated.jsonl",
                          "reports/metrics.json", "reports/comparison.txt", "reports/profiles.json",
                          "reports/profiles.txt", "reports/ablation.json", "reports/ablation.txt",
                          "reports/arbiter_models.json", "reports/training_log.json", "reports/warnings.json",
                          "reports/probes.jsonl", "geo/arbitrated_all.geojson", "geo/arbitrated_misclassified.geojson",
                          "geo/image_only_misclassified.geojson"}) {
        CAPTURE(f);
        CHECK(fs::exists(dir / "run1" / f));
    }
    CHECK(run.models.size() == 3);
    CHECK(run.ablation.rows.size() == 4);
    for (const auto& m : run.models) CHECK(m.pooled.recall_weighted == m.pooled.accuracy);
    CHECK(run.outcomes.size() == 30);
    CHECK(check_geojson(Json::parse(slurp(dir / "run1" / "geo" / "arbitrated_all.geojson"))).empty());
    CHECK(RunConfig::from_json(Json::parse(slurp(dir / "run1" / "config.json"))).to_json() == cfg.to_json());

    run_experiment(cfg, dir / "run2");
    for (const auto& e : fs::recursive_directory_iterator(dir / "run1")) {
        if (!e.is_regular_file() || e.path().filename() == "run_info.json") continue;
        const auto rel = fs::relative(e.path(), dir / "run1");
        CAPTURE(rel.string());
        CHECK(slurp(e.path()) == slurp(dir / "run2" / rel));
    }

    auto broken = cfg;
    broken.model_b = "missing_model";
    CHECK_THROWS_WITH_AS(run_experiment(broken, dir / "run3"), doctest::Contains("missing_model"), ValidationError);
}

TEST_CASE("engineered run: arbitration beats both models and shrinks the overconfident share") {
    const auto dir = gen::scratch("cv_fixture");
    synth::DatasetOptions opt;
    opt.class_counts = {200, 300, 200};
    opt.dim = 8;
    opt.seed = 2;
    const auto ds = synth::make_dataset(opt);
    synth::write_dataset(ds, dir / "data");
    const auto labels = ds.manifest.labels();
    synth::FixtureOptions fo;
    fo.seed = 7;
    const auto fx = synth::make_arbitration_fixture(labels, fo);
    write_predictions(dir / "a.jsonl", ds.manifest, "model_a", fx.a);
    write_predictions(dir / "b.jsonl", ds.manifest, "model_b", fx.b);
    write_probes(dir / "probes.jsonl", ds.manifest, fx.probes);

    RunConfig cfg;
    cfg.manifest = dir / "data" / "manifest.jsonl";
    cfg.image_embeddings = dir / "data" / "image.darb";
    cfg.text_embeddings = dir / "data" / "text.darb";
    cfg.probes = dir / "probes.jsonl";
    cfg.external_predictions = {dir / "a.jsonl", dir / "b.jsonl"};
    cfg.modes.clear();
    cfg.model_a = "model_a";
    cfg.model_b = "model_b";
    const auto run = run_experiment(cfg, dir / "run");
    REQUIRE(run.models.size() == 2);
    const double acc_a = run.models[0].pooled.accuracy, acc_b = run.models[1].pooled.accuracy;
    CHECK(run.arbitrated.pooled.accuracy >= std::max(acc_a, acc_b));
    CHECK(run.arbitrated.pooled.accuracy > acc_a);
    CHECK(run.arbitrated.profile.triage_pct[0] < run.models[0].profile.triage_pct[0]);
    CHECK(run.ablation.rows[0].accuracy > run.ablation.rows[3].accuracy);
    CHECK(run.ablation.rows[0].macro_f1 > run.ablation.rows[3].macro_f1);
}
