#pragma once
// Synthetic datasets and fixtures. Everything here is seed-deterministic and
// needs no pretrained encoder.

#include <array>
#include <vector>

#include "darb/interchange.hpp"
#include "darb/probes.hpp"
#include "darb/rng.hpp"

namespace darb::synth {

struct DatasetOptions {
    std::array<std::size_t, kNumClasses> class_counts{10, 10, 10};
    std::size_t dim = 16;
    double separation = 3.0;  // distance of class centroids from the origin
    double noise = 1.0;
    std::uint64_t seed = 0;
    std::size_t prompts_per_dim = 4;
};

struct Dataset {
    Manifest manifest;
    EmbeddingMatrix image;
    EmbeddingMatrix text;
    std::array<PromptSet, kNumProbeDims> prompts;  // with embeddings
};

// Class-clustered image embeddings; text embeddings share the class signal
// plus independent noise. Samples are interleaved across classes and carry
// short severity-flavoured captions and coordinates inside a coastal bounding box.
Dataset make_dataset(const DatasetOptions& opt);

// manifest.jsonl, image.darb, text.darb, captions.jsonl, prompts/prompts_<dim>.json(+.darb)
void write_dataset(const Dataset& ds, const fs::path& dir);

struct ArbitrationFixture {
    std::vector<ProbTriple> a;
    std::vector<ProbTriple> b;
    std::vector<ProbeVector> probes;  // pure noise
};

// Model A: confident and correct (p >= 0.95) except on `a_wrong_rate` of samples,
// where it is overconfidently wrong (p_wrong in [0.80, 0.90], margin >= 0.7).
// On most of those, model B is correct with p in [0.52, 0.60]; on the last
// `both_wrong_rate` share B is wrong too: p in [0.52, 0.56] on the third class, truth close behind.
// Where A is correct, B is wrong (p in [0.38, 0.46]) with probability `b_wrong_rate`.
struct FixtureOptions {
    double a_wrong_rate = 0.20;
    double both_wrong_rate = 0.03;
    double b_wrong_rate = 0.30;
    std::uint64_t seed = 0;
};

ArbitrationFixture make_arbitration_fixture(std::span<const Severity> truth, const FixtureOptions& opt);

// Uniformly random distribution on the simplex.
ProbTriple random_triple(Rng& rng);

}  // namespace darb::synth
