#include "darb/cv.hpp"

#include <chrono>
#include <ctime>
#include <memory>
#include <set>
#include <sstream>

#include "darb/rng.hpp"

namespace darb {

// ---------------------------------------------------------------------------
// Folds

std::vector<std::size_t> FoldAssignment::members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        if (fold_of[i] == fold) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FoldAssignment::complement(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        if (fold_of[i] != fold) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
    std::vector<std::size_t> out(k, 0);
    for (auto f : fold_of) ++out.at(f);
    return out;
}

std::vector<std::array<std::size_t, kNumClasses>> FoldAssignment::class_sizes(std::span<const Severity> labels) const {
    if (labels.size() != fold_of.size()) throw ValidationError("labels do not match the fold assignment");
    std::vector<std::array<std::size_t, kNumClasses>> out(k);
    for (std::size_t i = 0; i < labels.size(); ++i) ++out.at(fold_of[i])[index_of(labels[i])];
    return out;
}

Json FoldAssignment::to_json(const Manifest& manifest) const {
    if (manifest.size() != fold_of.size()) throw ValidationError("manifest does not match the fold assignment");
    Json folds = Json::array();
    const auto sizes = class_sizes(manifest.labels());
    for (std::size_t f = 0; f < k; ++f) {
        Json ids = Json::array();
        for (auto i : members(f)) ids.push_back(manifest.samples[i].id);
        Json per_class;
        for (auto s : kAllSeverities) per_class[std::string(to_string(s))] = sizes[f][index_of(s)];
        folds.push_back(Json{{"fold", f}, {"size", ids.size()}, {"class_sizes", per_class}, {"ids", ids}});
    }
    return Json{{"k", k}, {"seed", seed}, {"folds", folds}};
}

FoldAssignment FoldAssignment::from_json(const Json& j, const Manifest& manifest) {
    FoldAssignment fa;
    try {
        fa.k = j.at("k").get<std::size_t>();
        fa.seed = j.at("seed").get<std::uint64_t>();
        constexpr auto unset = static_cast<std::size_t>(-1);
        fa.fold_of.assign(manifest.size(), unset);
        for (const auto& f : j.at("folds")) {
            const auto fold = f.at("fold").get<std::size_t>();
            if (fold >= fa.k) throw ValidationError("folds.json: fold index out of range");
            for (const auto& id : f.at("ids")) {
                const auto idx = manifest.find(id.get<std::string>());
                if (!idx) throw ValidationError("folds.json: unknown id '" + id.get<std::string>() + "'");
                if (fa.fold_of[*idx] != unset) throw ValidationError("folds.json: id in two folds");
                fa.fold_of[*idx] = fold;
            }
        }
        for (std::size_t i = 0; i < fa.fold_of.size(); ++i) {
            if (fa.fold_of[i] == unset) {
                throw ValidationError("folds.json: sample '" + manifest.samples[i].id + "' has no fold");
            }
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("folds.json: ") + e.what());
    }
    return fa;
}

FoldAssignment stratified_folds(std::span<const Severity> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("fold count must be at least 2");
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[index_of(labels[i])].push_back(i);
    for (auto s : kAllSeverities) {
        const auto n = by_class[index_of(s)].size();
        if (n < k) {
            throw ValidationError("class " + std::string(to_string(s)) + " has " + std::to_string(n) +
                                  " samples, fewer than k = " + std::to_string(k));
        }
    }
    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    fa.fold_of.assign(labels.size(), 0);
    Rng rng(seed);
    std::size_t position = 0;
    for (auto& members : by_class) {
        rng.shuffle(std::span<std::size_t>(members));
        for (auto i : members) fa.fold_of[i] = position++ % k;
    }
    return fa;
}

FoldAssignment stratified_folds(const Manifest& manifest, std::size_t k, std::uint64_t seed) {
    const auto labels = manifest.labels();
    return stratified_folds(labels, k, seed);
}

// ---------------------------------------------------------------------------
// Out-of-fold collection

OofResult collect_oof(const FoldAssignment& folds, std::span<const FoldModel> models) {
    if (models.size() != folds.k) {
        throw ValidationError("expected " + std::to_string(folds.k) + " fold models, got " +
                              std::to_string(models.size()));
    }
    const std::size_t n = folds.fold_of.size();
    OofResult out;
    out.probs.resize(n);
    out.fold.assign(n, folds.k);
    for (std::size_t f = 0; f < folds.k; ++f) {
        if (!models[f].predict) throw Error("missing model for fold " + std::to_string(f));
        const auto held = folds.members(f);
        const std::set<std::size_t> trained(models[f].train_indices.begin(), models[f].train_indices.end());
        for (auto i : held) {
            if (trained.count(i)) {
                throw Error("leak: fold " + std::to_string(f) + " model trained on held-out sample " +
                            std::to_string(i));
            }
        }
        const auto preds = models[f].predict(held);
        if (preds.size() != held.size()) throw Error("fold " + std::to_string(f) + " model returned wrong count");
        for (std::size_t j = 0; j < held.size(); ++j) {
            if (out.fold[held[j]] != folds.k) throw Error("sample predicted twice");
            out.probs[held[j]] = preds[j];
            out.fold[held[j]] = f;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (out.fold[i] == folds.k) throw Error("sample " + std::to_string(i) + " received no prediction");
    }
    return out;
}

CrossFit arbitrate_oof(const ArbitrationInputs& in, const FoldAssignment& folds, const FeatureConfig& cfg,
                       const FitOptions& opt) {
    return cross_fit_arbitrate(in, folds.fold_of, folds.k, cfg, opt);
}

// ---------------------------------------------------------------------------
// GeoJSON

GeoMode parse_geo_mode(std::string_view text) {
    if (text == "all") return GeoMode::All;
    if (text == "misclassified") return GeoMode::MisclassifiedOnly;
    throw ValidationError("unknown geo mode '" + std::string(text) + "' (expected all or misclassified)");
}

std::vector<GeoRecord> geo_records(std::span<const ArbitrationOutcome> outcomes) {
    std::vector<GeoRecord> out;
    out.reserve(outcomes.size());
    for (const auto& o : outcomes) out.push_back({o.final_label, std::string(to_string(o.source)), {}, {}});
    return out;
}

std::vector<GeoRecord> geo_records(std::span<const ProbTriple> preds, std::span<const Severity> truth,
                                   const std::string& model, const TriageThresholds& th) {
    if (preds.size() != truth.size()) throw ValidationError("geo records: length mismatch");
    std::vector<GeoRecord> out;
    out.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        GeoRecord r{argmax_class(preds[i]), model, {}, {}};
        if (auto m = margin(preds[i], truth[i])) {
            r.margin = m->margin;
            r.triage = triage(m->margin, th);
        }
        out.push_back(std::move(r));
    }
    return out;
}

Json export_geojson(const Manifest& manifest, std::span<const GeoRecord> records, GeoMode mode) {
    if (records.size() != manifest.size()) throw ValidationError("geo export: records do not match the manifest");
    Json features = Json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& s = manifest.samples[i];
        if (!(s.lat >= -90.0 && s.lat <= 90.0) || !(s.lon >= -180.0 && s.lon <= 180.0)) {
            throw ValidationError("coordinate out of range for sample '" + s.id + "'");
        }
        const auto& r = records[i];
        const bool correct = r.predicted == s.label;
        if (mode == GeoMode::MisclassifiedOnly && correct) continue;
        Json props;
        props["id"] = s.id;
        props["true_label"] = std::string(to_string(s.label));
        props["pred_label"] = std::string(to_string(r.predicted));
        props["correct"] = correct;
        props["source"] = r.source;
        if (r.margin) props["margin"] = *r.margin;
        if (r.triage) props["triage"] = std::string(to_string(*r.triage));
        features.push_back(Json{{"type", "Feature"},
                                {"geometry", {{"type", "Point"}, {"coordinates", {s.lon, s.lat}}}},
                                {"properties", props}});
    }
    return Json{{"type", "FeatureCollection"}, {"features", features}};
}

std::vector<std::string> check_geojson(const Json& fc) {
    std::vector<std::string> problems;
    if (!fc.is_object() || fc.value("type", "") != "FeatureCollection") {
        problems.emplace_back("top level is not a FeatureCollection");
        return problems;
    }
    if (!fc.contains("features") || !fc.at("features").is_array()) {
        problems.emplace_back("features is not an array");
        return problems;
    }
    std::size_t i = 0;
    for (const auto& f : fc.at("features")) {
        const std::string where = "feature " + std::to_string(i++);
        if (!f.is_object() || f.value("type", "") != "Feature") {
            problems.push_back(where + ": type is not Feature");
            continue;
        }
        if (!f.contains("geometry") || !f["geometry"].is_object() || f["geometry"].value("type", "") != "Point") {
            problems.push_back(where + ": geometry is not a Point");
            continue;
        }
        const auto& c = f["geometry"].value("coordinates", Json::array());
        if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number()) {
            problems.push_back(where + ": coordinates are not [lon, lat]");
            continue;
        }
        const double lon = c[0].get<double>(), lat = c[1].get<double>();
        if (!(lon >= -180.0 && lon <= 180.0)) problems.push_back(where + ": longitude out of range");
        if (!(lat >= -90.0 && lat <= 90.0)) problems.push_back(where + ": latitude out of range");
        if (!f.contains("properties") || !f["properties"].is_object()) {
            problems.push_back(where + ": properties missing");
            continue;
        }
        for (const char* key : {"id", "true_label", "pred_label", "correct", "source"}) {
            if (!f["properties"].contains(key)) problems.push_back(where + ": property " + key + " missing");
        }
    }
    return problems;
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j, const fs::path& base) {
    if (!j.is_object()) throw ValidationError("run config must be a JSON object");
    RunConfig c;
    try {
        c.manifest = resolve(base, j.at("manifest").get<std::string>());
        c.image_embeddings = resolve(base, j.at("image_embeddings").get<std::string>());
        c.text_embeddings = resolve(base, j.at("text_embeddings").get<std::string>());
        if (j.contains("prompts_dir")) c.prompts_dir = resolve(base, j.at("prompts_dir").get<std::string>());
        if (j.contains("probes")) c.probes = resolve(base, j.at("probes").get<std::string>());
        if (j.contains("external_predictions")) {
            for (const auto& p : j.at("external_predictions")) {
                c.external_predictions.push_back(resolve(base, p.get<std::string>()));
            }
        }
        c.k = j.value("k", c.k);
        c.seed = j.value("seed", c.seed);
        if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
        if (j.contains("modes")) {
            c.modes.clear();
            for (const auto& m : j.at("modes")) c.modes.push_back(parse_fusion_mode(m.get<std::string>()));
        }
        c.model_a = j.value("model_a", c.model_a);
        c.model_b = j.value("model_b", c.model_b);
        if (j.contains("triage")) {
            c.triage.m_hi = j.at("triage").value("m_hi", c.triage.m_hi);
            c.triage.m_lo = j.at("triage").value("m_lo", c.triage.m_lo);
        }
        if (j.contains("arbiter")) c.arbiter = FeatureConfig::from_json(j.at("arbiter"));
        if (j.contains("ablation")) {
            c.ablation.clear();
            for (const auto& p : j.at("ablation")) c.ablation.push_back(FeatureConfig::from_json(p));
        }
        c.fit.reg_l2 = j.value("reg_l2", c.fit.reg_l2);
        c.fit.balance_classes = j.value("balance_classes", c.fit.balance_classes);
        if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("run config: ") + e.what());
    }
    c.triage.validate();
    if (c.k < 2) throw ValidationError("run config: k must be at least 2");
    if (c.model_a == c.model_b) throw ValidationError("run config: model_a and model_b must differ");
    return c;
}

Json RunConfig::to_json() const {
    Json j;
    j["manifest"] = manifest.string();
    j["image_embeddings"] = image_embeddings.string();
    j["text_embeddings"] = text_embeddings.string();
    if (prompts_dir) j["prompts_dir"] = prompts_dir->string();
    if (probes) j["probes"] = probes->string();
    Json ext = Json::array();
    for (const auto& p : external_predictions) ext.push_back(p.string());
    j["external_predictions"] = ext;
    j["k"] = k;
    j["seed"] = seed;
    Json t = train.to_json();
    t.erase("mode");
    t.erase("lambda_effective");
    j["train"] = t;
    Json modes_j = Json::array();
    for (auto m : modes) modes_j.push_back(std::string(to_string(m)));
    j["modes"] = modes_j;
    j["model_a"] = model_a;
    j["model_b"] = model_b;
    j["triage"] = {{"m_hi", triage.m_hi}, {"m_lo", triage.m_lo}};
    j["arbiter"] = arbiter.to_json();
    Json abl = Json::array();
    for (const auto& p : ablation) abl.push_back(p.to_json());
    j["ablation"] = abl;
    j["reg_l2"] = fit.reg_l2;
    j["balance_classes"] = fit.balance_classes;
    j["pooling"] = std::string(to_string(pooling));
    return j;
}

std::vector<MarginRecord> arbitrated_errors(std::span<const ArbitrationOutcome> outcomes,
                                            std::span<const ProbTriple> pred_a, std::span<const ProbTriple> pred_b,
                                            std::span<const Severity> truth, const TriageThresholds& th) {
    if (outcomes.size() != truth.size() || pred_a.size() != truth.size() || pred_b.size() != truth.size()) {
        throw ValidationError("arbitrated_errors: input lengths differ");
    }
    std::vector<MarginRecord> out;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto& p = outcomes[i].source == Source::ArbiterB ? pred_b[i] : pred_a[i];
        if (auto m = margin(p, truth[i])) {
            out.push_back({outcomes[i].id, m->predicted, m->truth, m->margin, triage(m->margin, th)});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

std::string modality_of(const std::string& model) {
    if (model == "image_only") return "Image";
    if (model == "text_only") return "Text";
    if (model == "fused") return "Image+Text";
    return "external";
}

template <typename F>
auto stage(const std::string& name, std::optional<std::size_t> fold, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        throw ValidationError("stage " + name + (fold ? " (fold " + std::to_string(*fold) + ")" : "") + ": " + e.what());
    } catch (const Error& e) {
        throw Error("stage " + name + (fold ? " (fold " + std::to_string(*fold) + ")" : "") + ": " + e.what());
    }
}

void write_json(const fs::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::vector<Severity> argmaxes(std::span<const ProbTriple> p) {
    std::vector<Severity> out;
    out.reserve(p.size());
    for (const auto& x : p) out.push_back(argmax_class(x));
    return out;
}

void fill_metrics(ModelResult& r, const FoldAssignment& folds, std::span<const Severity> truth,
                  std::span<const Severity> pred) {
    r.pooled = evaluate(confusion(truth, pred));
    r.per_fold.clear();
    for (std::size_t f = 0; f < folds.k; ++f) {
        std::vector<Severity> t, p;
        for (auto i : folds.members(f)) {
            t.push_back(truth[i]);
            p.push_back(pred[i]);
        }
        r.per_fold.push_back(evaluate(confusion(t, p)));
    }
}

Json model_json(const ModelResult& r) {
    Json j;
    j["model"] = r.name;
    j["modality"] = r.modality;
    j["pooled_oof"] = report_to_json(r.pooled);
    Json pf = Json::array();
    for (const auto& m : r.per_fold) pf.push_back(report_to_json(m));
    j["per_fold"] = pf;
    if (r.clip_score) j["clip_score"] = *r.clip_score;
    return j;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

ExperimentRun run_experiment(const RunConfig& cfg, const fs::path& out) {
    ExperimentRun run;
    run.config = cfg;
    const std::string started = utc_now();

    const auto manifest = stage("load", std::nullopt, [&] { return read_manifest(cfg.manifest); });
    const auto img = stage("load", std::nullopt, [&] {
        auto m = read_embeddings(cfg.image_embeddings);
        bind_embeddings(manifest, m, "image embeddings");
        return m;
    });
    const auto txt = stage("load", std::nullopt, [&] {
        auto m = read_embeddings(cfg.text_embeddings);
        bind_embeddings(manifest, m, "text embeddings");
        return m;
    });
    const auto truth = manifest.labels();
    std::vector<std::size_t> rows(manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i) rows[i] = manifest.samples[i].row;

    run.folds = stage("split", std::nullopt, [&] { return stratified_folds(manifest, cfg.k, cfg.seed); });
    write_json(out / "config.json", cfg.to_json());
    write_json(out / "folds.json", run.folds.to_json(manifest));

    std::optional<double> corpus_clip;
    if (img.cols() == txt.cols()) {
        std::vector<std::pair<std::span<const float>, std::span<const float>>> pairs;
        for (auto r : rows) pairs.emplace_back(img.row(r), txt.row(r));
        corpus_clip = corpus_clip_score(pairs);
    }

    // Fusion heads, one per mode and fold.
    Json training_logs = Json::object();
    for (auto mode : cfg.modes) {
        const std::string name(to_string(mode));
        TrainConfig tc = cfg.train;
        tc.mode = mode;
        std::vector<FoldModel> fold_models(cfg.k);
        Json mode_logs = Json::array();
        for (std::size_t f = 0; f < cfg.k; ++f) {
            const auto train_idx = run.folds.complement(f);
            std::vector<std::size_t> train_rows;
            std::vector<Severity> train_labels;
            for (auto i : train_idx) {
                train_rows.push_back(rows[i]);
                train_labels.push_back(truth[i]);
            }
            tc.seed = cfg.seed + 1000 * (f + 1);
            auto result = stage("train-head " + name, f, [&] { return train(img, txt, train_rows, train_labels, tc); });
            Json log = Json::array();
            for (const auto& e : result.log) {
                log.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"mean_contrast", e.mean_contrast},
                               {"mean_cls", e.mean_cls}});
            }
            mode_logs.push_back(Json{{"fold", f}, {"config", tc.to_json()}, {"clamped", result.clamped}, {"epochs", log}});
            auto params = std::make_shared<FusionParams>(std::move(result.params));
            fold_models[f].train_indices = train_idx;
            fold_models[f].predict = [params, &img, &txt, &rows](std::span<const std::size_t> held) {
                std::vector<std::size_t> r;
                for (auto i : held) r.push_back(rows[i]);
                return predict_rows(*params, img, txt, r);
            };
        }
        training_logs[name] = mode_logs;
        auto oof = stage("predict " + name, std::nullopt, [&] { return collect_oof(run.folds, fold_models); });
        ModelResult mr;
        mr.name = name;
        mr.modality = modality_of(name);
        mr.oof = std::move(oof.probs);
        if (mode != FusionMode::ImageOnly) mr.clip_score = corpus_clip;
        run.models.push_back(std::move(mr));
    }

    // External baselines (already out-of-fold by construction of the exporter).
    for (const auto& path : cfg.external_predictions) {
        const auto set = stage("load-predictions", std::nullopt, [&] { return read_predictions(path, manifest); });
        for (const auto& [model, _] : set.by_model) {
            ModelResult mr;
            mr.name = model;
            mr.modality = modality_of(model);
            mr.oof = stage("load-predictions", std::nullopt, [&] { return set.complete(model); });
            run.models.push_back(std::move(mr));
        }
    }

    std::set<std::string> seen;
    for (auto& mr : run.models) {
        if (!seen.insert(mr.name).second) throw ValidationError("duplicate model name '" + mr.name + "'");
        const auto pred = argmaxes(mr.oof);
        fill_metrics(mr, run.folds, truth, pred);
        std::vector<std::string> ids;
        for (const auto& s : manifest.samples) ids.push_back(s.id);
        const auto errors = collect_errors(ids, mr.oof, truth, cfg.triage);
        mr.profile = profile(errors);
        write_predictions(out / "predictions" / (mr.name + ".jsonl"), manifest, mr.name, mr.oof);
    }

    auto find_model = [&](const std::string& name) -> const ModelResult& {
        for (const auto& m : run.models) {
            if (m.name == name) return m;
        }
        throw ValidationError("arbitration model '" + name + "' not produced by this run");
    };
    const auto& model_a = find_model(cfg.model_a);
    const auto& model_b = find_model(cfg.model_b);

    // Probes.
    std::vector<ProbeVector> probes;
    if (cfg.probes) {
        probes = stage("score-probes", std::nullopt, [&] { return read_probes(*cfg.probes, manifest); });
    } else if (cfg.prompts_dir) {
        probes = stage("score-probes", std::nullopt, [&] {
            const auto prompts = read_prompt_dir(*cfg.prompts_dir);
            return score_probes(img, manifest, prompts, cfg.pooling);
        });
    }
    if (!probes.empty()) write_probes(out / "reports" / "probes.jsonl", manifest, probes);

    std::vector<std::string> ids;
    for (const auto& s : manifest.samples) ids.push_back(s.id);
    ArbitrationInputs in{ids, model_a.oof, model_b.oof, probes, truth};

    auto cf = stage("arbitrate", std::nullopt, [&] { return arbitrate_oof(in, run.folds, cfg.arbiter, cfg.fit); });
    run.outcomes = std::move(cf.outcomes);
    run.arbiter_models = std::move(cf.fold_models);

    run.arbitrated.name = "arbitrated";
    run.arbitrated.modality = cfg.model_a + "+" + cfg.model_b;
    {
        std::vector<Severity> pred;
        for (const auto& o : run.outcomes) pred.push_back(o.final_label);
        fill_metrics(run.arbitrated, run.folds, truth, pred);
        run.arbitrated.profile = profile(arbitrated_errors(run.outcomes, model_a.oof, model_b.oof, truth, cfg.triage));
    }

    std::vector<FeatureConfig> presets;
    for (const auto& p : cfg.ablation) {
        if (p.use_probes && probes.empty()) {
            run.warnings.push_back("preset " + p.name + " skipped: no probe features available");
            continue;
        }
        presets.push_back(p);
    }
    run.ablation = stage("ablate", std::nullopt, [&] { return run_ablation(in, presets, run.folds.fold_of, cfg.k, cfg.fit); });
    for (const auto& w : run.ablation.warnings) run.warnings.push_back(w);

    // Reports.
    {
        std::ostringstream os;
        for (const auto& o : run.outcomes) os << outcome_to_json(o).dump() << '\n';
        write_text_file(out / "predictions" / "arbitrated.jsonl", os.str());
    }
    Json metrics;
    Json models_j = Json::array();
    for (const auto& m : run.models) models_j.push_back(model_json(m));
    metrics["models"] = models_j;
    metrics["arbitrated"] = model_json(run.arbitrated);
    write_json(out / "reports" / "metrics.json", metrics);

    std::vector<ComparisonRow> table;
    for (const auto& m : run.models) table.push_back({m.name, m.modality, m.pooled, m.clip_score});
    table.push_back({run.arbitrated.name, run.arbitrated.modality, run.arbitrated.pooled, std::nullopt});
    write_text_file(out / "reports" / "comparison.txt", "pooled out-of-fold\n" + format_comparison_table(table));

    Json profiles;
    std::vector<ProfileRow> prow;
    for (const auto& m : run.models) {
        profiles[m.name] = profile_to_json(m.profile);
        prow.push_back({m.name, m.modality, m.profile});
    }
    profiles["arbitrated"] = profile_to_json(run.arbitrated.profile);
    prow.push_back({run.arbitrated.name, run.arbitrated.modality, run.arbitrated.profile});
    write_json(out / "reports" / "profiles.json", profiles);
    write_text_file(out / "reports" / "profiles.txt", format_profile_table(prow));

    write_json(out / "reports" / "ablation.json", ablation_to_json(run.ablation));
    write_text_file(out / "reports" / "ablation.txt", format_ablation_table(run.ablation));

    Json arbiters = Json::array();
    for (std::size_t f = 0; f < run.arbiter_models.size(); ++f) {
        arbiters.push_back(Json{{"fold", f}, {"model", run.arbiter_models[f].to_json()}});
    }
    write_json(out / "reports" / "arbiter_models.json", arbiters);
    write_json(out / "reports" / "training_log.json", training_logs);
    write_json(out / "reports" / "warnings.json", run.warnings);

    const auto geo = geo_records(run.outcomes);
    write_json(out / "geo" / "arbitrated_all.geojson", export_geojson(manifest, geo, GeoMode::All));
    write_json(out / "geo" / "arbitrated_misclassified.geojson",
               export_geojson(manifest, geo, GeoMode::MisclassifiedOnly));
    const auto geo_a = geo_records(model_a.oof, truth, model_a.name, cfg.triage);
    write_json(out / "geo" / (model_a.name + "_misclassified.geojson"),
               export_geojson(manifest, geo_a, GeoMode::MisclassifiedOnly));

    write_json(out / "run_info.json",
               Json{{"started_utc", started}, {"finished_utc", utc_now()}, {"seed", cfg.seed}, {"samples", manifest.size()}});
    return run;
}

}  // namespace darb
