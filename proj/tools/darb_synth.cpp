// darb-synth: writes a synthetic dataset that the damagearbiter CLI can consume.
//
//   darb-synth --out demo --counts 40,60,40 --dim 16 --seed 7 --fixture

#include <iostream>

#include <CLI11.hpp>

#include "darb/probes.hpp"
#include "darb/synth.hpp"

using namespace darb;

int main(int argc, char** argv) {
    CLI::App app{"Synthetic dataset generator"};
    std::string out = "synthetic";
    std::vector<std::size_t> counts{10, 10, 10};
    synth::DatasetOptions opt;
    bool fixture = false;
    app.add_option("--out", out)->capture_default_str();
    app.add_option("--counts", counts, "Samples per class (mild,moderate,severe)")->delimiter(',')->expected(3);
    app.add_option("--dim", opt.dim)->capture_default_str();
    app.add_option("--separation", opt.separation)->capture_default_str();
    app.add_option("--noise", opt.noise)->capture_default_str();
    app.add_option("--seed", opt.seed)->capture_default_str();
    app.add_flag("--fixture", fixture, "Also write engineered two-model predictions and noise probes");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        for (std::size_t i = 0; i < kNumClasses; ++i) opt.class_counts[i] = counts.at(i);
        const auto ds = synth::make_dataset(opt);
        const fs::path dir(out);
        synth::write_dataset(ds, dir);
        if (fixture) {
            const auto labels = ds.manifest.labels();
            synth::FixtureOptions fo;
            fo.seed = opt.seed;
            const auto fx = synth::make_arbitration_fixture(labels, fo);
            std::ostringstream both;
            write_predictions(both, ds.manifest, "model_a", fx.a);
            write_predictions(both, ds.manifest, "model_b", fx.b);
            write_text_file(dir / "fixture_predictions.jsonl", both.str());
            write_probes(dir / "fixture_probes.jsonl", ds.manifest, fx.probes);
        }
        Json run{{"manifest", "manifest.jsonl"},
                 {"image_embeddings", "image.darb"},
                 {"text_embeddings", "text.darb"},
                 {"prompts_dir", "prompts"},
                 {"k", 3},
                 {"seed", opt.seed},
                 {"train", {{"epochs", 10}, {"d_proj", 16}, {"lr", 1e-2}, {"batch_size", 32}}},
                 {"model_a", "image_only"},
                 {"model_b", "fused"}};
        write_text_file(dir / "run.json", run.dump(2) + "\n");
        std::cout << "wrote " << ds.manifest.size() << " samples to " << dir.string() << "\n";
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
