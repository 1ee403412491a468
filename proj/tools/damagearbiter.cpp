// damagearbiter: command-line front end.
//
// Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "darb/arbiter.hpp"
#include "darb/confidence.hpp"
#include "darb/cv.hpp"
#include "darb/fusion.hpp"
#include "darb/interchange.hpp"
#include "darb/metrics.hpp"
#include "darb/probes.hpp"

using namespace darb;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

Json load_config(const Globals& g) {
    if (g.config.empty()) return Json::object();
    Json j;
    try {
        j = Json::parse(read_text_file(g.config));
    } catch (const Json::parse_error& e) {
        throw ValidationError("config " + g.config + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError("config " + g.config + " must hold a JSON object");
    return j;
}

Json section(const Json& cfg, const char* key) { return cfg.contains(key) ? cfg.at(key) : Json::object(); }

std::uint64_t seed_of(const Globals& g, const Json& cfg) {
    if (g.seed) return *g.seed;
    return cfg.value("seed", std::uint64_t{0});
}

void write_json(const fs::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

PredictionSet load_predictions(const std::vector<std::string>& files, const Manifest& manifest) {
    PredictionSet all;
    for (const auto& f : files) {
        auto set = read_predictions(f, manifest);
        for (const auto& [model, ids] : set.missing) {
            if (!ids.empty()) {
                std::cerr << "warning: " << f << ": model " << model << " lacks " << ids.size() << " of "
                          << manifest.size() << " samples\n";
            }
        }
        merge_predictions(all, set, manifest);
    }
    return all;
}

std::vector<std::string> manifest_ids(const Manifest& m) {
    std::vector<std::string> ids;
    for (const auto& s : m.samples) ids.push_back(s.id);
    return ids;
}

std::vector<std::string> corpus_from(const std::string& captions, const Manifest* manifest) {
    std::vector<std::string> docs;
    if (!captions.empty()) {
        for (const auto& rec : read_captions(captions)) {
            for (const auto& w : rec.warnings) std::cerr << "warning: caption " << rec.id << ": " << w << "\n";
            docs.push_back(rec.description);
        }
    } else if (manifest) {
        for (const auto& s : manifest->samples) {
            if (s.caption_llm) docs.push_back(*s.caption_llm);
            else if (s.caption_human) docs.push_back(*s.caption_human);
        }
    }
    if (docs.empty()) throw ValidationError("no captions available for probe mining");
    return docs;
}

TriageThresholds triage_from(const Json& cfg, std::optional<double> hi, std::optional<double> lo) {
    TriageThresholds th;
    const auto s = section(cfg, "triage");
    th.m_hi = hi.value_or(s.value("m_hi", th.m_hi));
    th.m_lo = lo.value_or(s.value("m_lo", th.m_lo));
    th.validate();
    return th;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ValidationError("bad number '" + item + "' in list");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Disagreement-driven arbitration toolkit for post-disaster severity classification"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON configuration file");
    app.add_option("--seed", g.seed, "Random seed (overrides the config)");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();

    // Shared option storage.
    std::string manifest_path, image_path, text_path, prompts_dir, captions_path, candidates_path, probes_path;
    std::string params_path, arbiter_path, arbitrated_path, folds_path, model_name, model_a = "image_only",
                                                                          model_b = "fused";
    std::vector<std::string> predictions, embeddings;
    std::string geojson_path, mode_text = "fused", preset_name = "conf", pooling_text, geo_mode = "all",
                              tau_sweep;
    std::size_t k = 3;
    std::optional<std::size_t> fold, epochs, batch_size, d_proj;
    std::optional<double> lambda, tau_contrast, lr, weight_decay, tau_decision, reg_l2, m_hi, m_lo;

    auto* validate = app.add_subcommand("validate", "Check interchange files against the manifest");
    validate->add_option("--manifest", manifest_path)->required();
    validate->add_option("--embeddings", embeddings, "Embedding blobs to bind to the manifest");
    validate->add_option("--predictions", predictions);
    validate->add_option("--prompts", prompts_dir, "Directory with prompts_<dimension>.json");
    validate->add_option("--captions", captions_path);
    validate->add_option("--geojson", geojson_path);

    auto* split = app.add_subcommand("split", "Stratified k-fold assignment");
    split->add_option("--manifest", manifest_path)->required();
    split->add_option("-k,--folds", k)->capture_default_str();

    auto* train_head = app.add_subcommand("train-head", "Train a projection + classification head");
    train_head->add_option("--manifest", manifest_path)->required();
    train_head->add_option("--image", image_path)->required();
    train_head->add_option("--text", text_path)->required();
    train_head->add_option("--mode", mode_text, "image_only, text_only or fused")->capture_default_str();
    train_head->add_option("--fold-file", folds_path, "folds.json; with --fold trains on the other folds");
    train_head->add_option("--fold", fold);
    train_head->add_option("--lambda", lambda);
    train_head->add_option("--tau", tau_contrast, "Contrastive temperature");
    train_head->add_option("--lr", lr);
    train_head->add_option("--weight-decay", weight_decay);
    train_head->add_option("--epochs", epochs);
    train_head->add_option("--batch-size", batch_size);
    train_head->add_option("--d-proj", d_proj);

    auto* predict = app.add_subcommand("predict", "Class probabilities from a trained head");
    predict->add_option("--manifest", manifest_path)->required();
    predict->add_option("--image", image_path)->required();
    predict->add_option("--text", text_path)->required();
    predict->add_option("--params", params_path)->required();
    predict->add_option("--model", model_name, "Model name written to each record")->required();

    auto* mine = app.add_subcommand("mine-probes", "Mine probe phrases and write prompt sets");
    mine->add_option("--captions", captions_path, "captions.jsonl (default: manifest captions)");
    mine->add_option("--manifest", manifest_path);
    mine->add_option("--candidates", candidates_path, "Externally extracted phrases, one per line");

    auto* score = app.add_subcommand("score-probes", "Probe vectors for every image");
    score->add_option("--manifest", manifest_path)->required();
    score->add_option("--image", image_path)->required();
    score->add_option("--prompts", prompts_dir)->required();
    score->add_option("--pooling", pooling_text, "max or mean");

    auto* profile_cmd = app.add_subcommand("profile-errors", "Confidence-margin triage of misclassifications");
    profile_cmd->add_option("--manifest", manifest_path)->required();
    profile_cmd->add_option("--predictions", predictions)->required();
    profile_cmd->add_option("--m-hi", m_hi);
    profile_cmd->add_option("--m-lo", m_lo);

    auto add_pair = [&](CLI::App* sub) {
        sub->add_option("--manifest", manifest_path)->required();
        sub->add_option("--predictions", predictions)->required();
        sub->add_option("--model-a", model_a)->capture_default_str();
        sub->add_option("--model-b", model_b)->capture_default_str();
        sub->add_option("--probes", probes_path, "probes.jsonl");
    };

    auto* train_arb = app.add_subcommand("train-arbiter", "Fit the arbitration meta-classifier");
    add_pair(train_arb);
    train_arb->add_option("--preset", preset_name, "conf, conf+unc, conf+unc+probe, probe_only")->capture_default_str();
    train_arb->add_option("--tau", tau_decision, "Decision threshold override");
    train_arb->add_option("--reg", reg_l2);

    auto* arbitrate_cmd = app.add_subcommand("arbitrate", "Resolve disagreements with a fitted arbiter");
    add_pair(arbitrate_cmd);
    arbitrate_cmd->add_option("--arbiter", arbiter_path)->required();

    auto* ablate = app.add_subcommand("ablate", "Cross-validated feature ablation");
    add_pair(ablate);
    ablate->add_option("--fold-file", folds_path);
    ablate->add_option("-k,--folds", k)->capture_default_str();
    ablate->add_option("--reg", reg_l2);
    ablate->add_option("--tau-sweep", tau_sweep, "Comma-separated decision thresholds applied to every preset");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Metric report for predictions or arbitrated outcomes");
    evaluate_cmd->add_option("--manifest", manifest_path)->required();
    evaluate_cmd->add_option("--predictions", predictions);
    evaluate_cmd->add_option("--arbitrated", arbitrated_path);

    auto* export_geo = app.add_subcommand("export-geo", "GeoJSON of predictions or arbitrated outcomes");
    export_geo->add_option("--manifest", manifest_path)->required();
    export_geo->add_option("--predictions", predictions);
    export_geo->add_option("--model", model_name);
    export_geo->add_option("--arbitrated", arbitrated_path);
    export_geo->add_option("--mode", geo_mode, "all or misclassified")->capture_default_str();

    auto* run_cmd = app.add_subcommand("run", "Full cross-validated pipeline (requires --config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        const Json cfg = load_config(g);
        const fs::path out(g.out);

        if (*validate) {
            const auto manifest = read_manifest(manifest_path);
            std::cout << "manifest: " << manifest.size() << " samples (mild " << manifest.class_counts[0]
                      << ", moderate " << manifest.class_counts[1] << ", severe " << manifest.class_counts[2] << ")\n";
            for (const auto& e : embeddings) {
                const auto m = read_embeddings(e);
                bind_embeddings(manifest, m, e);
                std::cout << e << ": " << m.rows() << " x " << m.cols() << "\n";
            }
            if (!predictions.empty()) {
                const auto set = load_predictions(predictions, manifest);
                for (const auto& [model, _] : set.by_model) {
                    std::cout << "predictions " << model << ": " << manifest.size() - set.missing.at(model).size()
                              << " / " << manifest.size() << "\n";
                }
            }
            if (!prompts_dir.empty()) {
                for (const auto& set : read_prompt_dir(prompts_dir)) {
                    std::cout << "prompts " << to_string(set.dimension) << ": " << set.prompts.size()
                              << (set.embeddings ? " (embedded)" : "") << "\n";
                }
            }
            if (!captions_path.empty()) {
                std::size_t warned = 0;
                const auto caps = read_captions(captions_path);
                for (const auto& c : caps) {
                    for (const auto& w : c.warnings) std::cerr << "warning: caption " << c.id << ": " << w << "\n";
                    warned += c.warnings.empty() ? 0 : 1;
                }
                std::cout << "captions: " << caps.size() << " records, " << warned << " with warnings\n";
            }
            if (!geojson_path.empty()) {
                Json fc;
                try {
                    fc = Json::parse(read_text_file(geojson_path));
                } catch (const Json::parse_error& e) {
                    throw ValidationError(geojson_path + ": " + e.what());
                }
                const auto problems = check_geojson(fc);
                for (const auto& p : problems) std::cerr << geojson_path << ": " << p << "\n";
                if (!problems.empty()) throw ValidationError(geojson_path + ": invalid GeoJSON");
                std::cout << geojson_path << ": " << fc["features"].size() << " features\n";
            }
            std::cout << "ok\n";
        } else if (*split) {
            const auto manifest = read_manifest(manifest_path);
            const auto folds = stratified_folds(manifest, k, seed_of(g, cfg));
            write_json(out / "folds.json", folds.to_json(manifest));
            const auto sizes = folds.fold_sizes();
            for (std::size_t f = 0; f < sizes.size(); ++f) std::cout << "fold " << f << ": " << sizes[f] << "\n";
        } else if (*train_head) {
            const auto manifest = read_manifest(manifest_path);
            const auto img = read_embeddings(image_path);
            const auto txt = read_embeddings(text_path);
            bind_embeddings(manifest, img, "image embeddings");
            bind_embeddings(manifest, txt, "text embeddings");
            TrainConfig tc = TrainConfig::from_json(section(cfg, "train"));
            tc.mode = parse_fusion_mode(mode_text);
            tc.seed = seed_of(g, cfg);
            if (lambda) tc.lambda_mix = *lambda;
            if (tau_contrast) tc.tau_contrast = *tau_contrast;
            if (lr) tc.lr = *lr;
            if (weight_decay) tc.weight_decay = *weight_decay;
            if (epochs) tc.epochs = *epochs;
            if (batch_size) tc.batch_size = *batch_size;
            if (d_proj) tc.d_proj = *d_proj;
            tc.validate();
            std::vector<std::size_t> subset(manifest.size());
            for (std::size_t i = 0; i < subset.size(); ++i) subset[i] = i;
            if (fold) {
                if (folds_path.empty()) throw ValidationError("--fold requires --fold-file");
                const auto fa = FoldAssignment::from_json(Json::parse(read_text_file(folds_path)), manifest);
                if (*fold >= fa.k) throw ValidationError("--fold out of range");
                subset = fa.complement(*fold);
            }
            std::vector<std::size_t> rows;
            std::vector<Severity> labels;
            for (auto i : subset) {
                rows.push_back(manifest.samples[i].row);
                labels.push_back(manifest.samples[i].label);
            }
            const auto result = train(img, txt, rows, labels, tc);
            write_params(result.params, out / "params.darp");
            write_json(out / "train_config.json", tc.to_json());
            write_text_file(out / "training_log.jsonl", training_log_jsonl(result));
            for (const auto& e : result.log) {
                std::cout << "epoch " << e.epoch << "  loss " << e.mean_loss << "  contrast " << e.mean_contrast
                          << "  cls " << e.mean_cls << "\n";
            }
            if (result.clamped) std::cerr << "warning: " << result.clamped << " probabilities clamped\n";
        } else if (*predict) {
            const auto manifest = read_manifest(manifest_path);
            const auto img = read_embeddings(image_path);
            const auto txt = read_embeddings(text_path);
            bind_embeddings(manifest, img, "image embeddings");
            bind_embeddings(manifest, txt, "text embeddings");
            const auto params = read_params(params_path);
            std::vector<std::size_t> rows;
            for (const auto& s : manifest.samples) rows.push_back(s.row);
            const auto probs = predict_rows(params, img, txt, rows);
            write_predictions(out / "predictions.jsonl", manifest, model_name, probs);
            std::cout << "wrote " << probs.size() << " predictions\n";
        } else if (*mine) {
            std::optional<Manifest> manifest;
            if (!manifest_path.empty()) manifest = read_manifest(manifest_path);
            const auto docs = corpus_from(captions_path, manifest ? &*manifest : nullptr);
            const auto pc = ProbeConfig::from_json(section(cfg, "probes"));
            const Corpus corpus(docs);
            std::vector<CandidatePhrase> cands;
            if (!candidates_path.empty()) {
                std::vector<std::string> phrases;
                std::istringstream in(read_text_file(candidates_path));
                for (std::string line; std::getline(in, line);) {
                    if (!line.empty()) phrases.push_back(line);
                }
                cands = import_candidates(phrases, docs);
            } else {
                cands = extract_candidates(docs, pc);
            }
            const auto selection = assign_and_select(cands, pc, corpus);
            for (auto d : selection.no_foreground) {
                std::cerr << "warning: dimension " << to_string(d) << " has no foreground captions\n";
            }
            const auto sets = build_prompt_sets(selection, pc);
            for (const auto& set : sets) {
                write_prompt_set(set, out / "prompts" / prompt_file_name(set.dimension));
                std::cout << to_string(set.dimension) << ": " << selection.per_dim[index_of(set.dimension)].size()
                          << " phrases, " << set.prompts.size() << " prompts\n";
            }
            write_json(out / "phrase_frequencies.json", export_phrase_frequencies(selection));
        } else if (*score) {
            const auto manifest = read_manifest(manifest_path);
            const auto img = read_embeddings(image_path);
            bind_embeddings(manifest, img, "image embeddings");
            auto pc = ProbeConfig::from_json(section(cfg, "probes"));
            if (!pooling_text.empty()) pc.pooling = parse_pooling(pooling_text);
            const auto prompts = read_prompt_dir(prompts_dir);
            const auto probes = score_probes(img, manifest, prompts, pc.pooling);
            write_probes(out / "probes.jsonl", manifest, probes);
            std::cout << "wrote " << probes.size() << " probe vectors\n";
        } else if (*profile_cmd) {
            const auto manifest = read_manifest(manifest_path);
            const auto set = load_predictions(predictions, manifest);
            const auto th = triage_from(cfg, m_hi, m_lo);
            const auto ids = manifest_ids(manifest);
            const auto truth = manifest.labels();
            Json report;
            std::vector<ProfileRow> rows;
            for (const auto& [model, _] : set.by_model) {
                const auto probs = set.complete(model);
                const auto rep = profile(collect_errors(ids, probs, truth, th));
                report[model] = profile_to_json(rep);
                rows.push_back({model, "", rep});
            }
            write_json(out / "profiles.json", report);
            std::cout << format_profile_table(rows);
        } else if (*train_arb || *arbitrate_cmd || *ablate) {
            const auto manifest = read_manifest(manifest_path);
            const auto set = load_predictions(predictions, manifest);
            const auto pa = set.complete(model_a);
            const auto pb = set.complete(model_b);
            std::vector<ProbeVector> probes;
            if (!probes_path.empty()) probes = read_probes(probes_path, manifest);
            const auto ids = manifest_ids(manifest);
            const auto truth = manifest.labels();
            const ArbitrationInputs in{ids, pa, pb, probes, truth};
            FitOptions fo;
            fo.reg_l2 = reg_l2.value_or(cfg.value("reg_l2", fo.reg_l2));
            fo.balance_classes = cfg.value("balance_classes", false);

            if (*train_arb) {
                auto fc = FeatureConfig::preset(preset_name);
                if (train_arb->count("--preset") == 0 && cfg.contains("arbiter")) {
                    fc = FeatureConfig::from_json(cfg.at("arbiter"));
                }
                if (tau_decision) fc.tau_decision = *tau_decision;
                fc.validate();
                std::vector<std::size_t> all(manifest.size());
                for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                const auto ts = build_trust_set(in, all, fc);
                const auto model = fit_arbiter(ts.x, ts.y, fc, fo);
                for (const auto& d : model.fit.dropped_features) {
                    std::cerr << "notice: dropped zero-variance feature " << d << "\n";
                }
                write_json(out / "arbiter.json", model.to_json());
                std::cout << "fitted on " << ts.x.size() << " disagreements; " << model.fit.iterations
                          << " iterations, gradient " << model.fit.grad_inf_norm << "\n";
            } else if (*arbitrate_cmd) {
                const auto model = ArbiterModel::from_json(Json::parse(read_text_file(arbiter_path)));
                in.validate(model.config.use_probes);
                std::ostringstream os;
                std::size_t agree = 0, to_a = 0, to_b = 0;
                for (std::size_t i = 0; i < manifest.size(); ++i) {
                    auto o = arbitrate(pa[i], pb[i], probes.empty() ? ProbeVector{} : probes[i], model);
                    o.id = ids[i];
                    agree += o.source == Source::Agreement;
                    to_a += o.source == Source::ArbiterA;
                    to_b += o.source == Source::ArbiterB;
                    os << outcome_to_json(o).dump() << '\n';
                }
                write_text_file(out / "arbitrated.jsonl", os.str());
                std::cout << "agreement " << agree << ", arbiter chose A " << to_a << ", B " << to_b << "\n";
            } else {
                FoldAssignment fa = folds_path.empty()
                                        ? stratified_folds(manifest, k, seed_of(g, cfg))
                                        : FoldAssignment::from_json(Json::parse(read_text_file(folds_path)), manifest);
                std::vector<FeatureConfig> presets;
                for (auto p : FeatureConfig::canonical_presets()) {
                    if (p.use_probes && probes.empty()) {
                        std::cerr << "warning: preset " << p.name << " skipped: no --probes given\n";
                        continue;
                    }
                    if (tau_sweep.empty()) {
                        presets.push_back(p);
                        continue;
                    }
                    for (double t : parse_list(tau_sweep)) {
                        p.tau_decision = t;
                        p.validate();
                        presets.push_back(p);
                    }
                }
                const auto table = run_ablation(in, presets, fa.fold_of, fa.k, fo);
                for (const auto& w : table.warnings) std::cerr << "warning: " << w << "\n";
                write_json(out / "ablation.json", ablation_to_json(table));
                const auto text = format_ablation_table(table);
                write_text_file(out / "ablation.txt", text);
                std::cout << text;
            }
        } else if (*evaluate_cmd) {
            const auto manifest = read_manifest(manifest_path);
            const auto truth = manifest.labels();
            std::vector<ComparisonRow> rows;
            Json report;
            if (!predictions.empty()) {
                const auto set = load_predictions(predictions, manifest);
                for (const auto& [model, _] : set.by_model) {
                    std::vector<Severity> pred;
                    for (const auto& p : set.complete(model)) pred.push_back(argmax_class(p));
                    const auto rep = evaluate(confusion(truth, pred));
                    report[model] = report_to_json(rep);
                    rows.push_back({model, "", rep, std::nullopt});
                }
            }
            if (!arbitrated_path.empty()) {
                std::vector<Severity> pred;
                for (const auto& o : read_outcomes(arbitrated_path, manifest)) pred.push_back(o.final_label);
                const auto rep = evaluate(confusion(truth, pred));
                report["arbitrated"] = report_to_json(rep);
                rows.push_back({"arbitrated", "", rep, std::nullopt});
            }
            if (rows.empty()) throw ValidationError("evaluate needs --predictions or --arbitrated");
            write_json(out / "metrics.json", report);
            std::cout << format_comparison_table(rows);
        } else if (*export_geo) {
            const auto manifest = read_manifest(manifest_path);
            const auto mode = parse_geo_mode(geo_mode);
            std::vector<GeoRecord> records;
            std::string name;
            if (!arbitrated_path.empty()) {
                records = geo_records(read_outcomes(arbitrated_path, manifest));
                name = "arbitrated";
            } else if (!predictions.empty()) {
                const auto set = load_predictions(predictions, manifest);
                if (model_name.empty()) {
                    if (set.by_model.size() != 1) throw ValidationError("--model is required with several models");
                    model_name = set.by_model.begin()->first;
                }
                records = geo_records(set.complete(model_name), manifest.labels(), model_name,
                                      triage_from(cfg, std::nullopt, std::nullopt));
                name = model_name;
            } else {
                throw ValidationError("export-geo needs --predictions or --arbitrated");
            }
            const auto fc = export_geojson(manifest, records, mode);
            const auto path = out / (name + (mode == GeoMode::All ? "_all" : "_misclassified") + ".geojson");
            write_json(path, fc);
            std::cout << path.string() << ": " << fc["features"].size() << " features\n";
        } else if (*run_cmd) {
            if (g.config.empty()) throw ValidationError("run requires --config");
            auto rc = RunConfig::from_json(cfg, fs::path(g.config).parent_path());
            if (g.seed) rc.seed = *g.seed;
            const auto run = run_experiment(rc, out);
            for (const auto& w : run.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << read_text_file(out / "reports" / "comparison.txt") << "\n"
                      << read_text_file(out / "reports" / "profiles.txt") << "\n"
                      << read_text_file(out / "reports" / "ablation.txt");
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
