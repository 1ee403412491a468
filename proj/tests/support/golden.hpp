#pragma once
// Small hand-written fixture set whose serialized bytes are pinned by SHA-256.
// Values are chosen to be exactly representable so no formatting ambiguity exists.

#include <vector>

#include "darb/interchange.hpp"

namespace golden {

inline darb::Manifest manifest() {
    std::vector<darb::Sample> s(3);
    s[0] = {"ftm_0001", 26.5, -81.875, darb::Severity::Mild, std::nullopt, std::string("a few branches"),
            std::string("images/ftm_0001.jpg"), 0};
    s[1] = {"ftm_0002", 26.25, -82.0, darb::Severity::Moderate, std::string("debris by the curb"), std::nullopt,
            std::nullopt, 1};
    s[2] = {"ftm_0003", 27.0, -81.5, darb::Severity::Severe, std::nullopt, std::nullopt, std::nullopt, 2};
    return darb::make_manifest(std::move(s));
}

inline darb::EmbeddingMatrix embeddings() {
    std::vector<float> v;
    for (int i = 0; i < 12; ++i) v.push_back(static_cast<float>(i) * 0.25f - 1.0f);
    v[5] = -0.0f;
    v[11] = 1e-3f;
    return darb::EmbeddingMatrix(3, 4, std::move(v));
}

inline std::vector<darb::ProbTriple> predictions() {
    return {darb::ProbTriple::from_raw(0.5, 0.25, 0.25), darb::ProbTriple::from_raw(0.125, 0.75, 0.125),
            darb::ProbTriple::from_raw(0.0, 0.375, 0.625)};
}

inline darb::PromptSet prompts() {
    darb::PromptSet p;
    p.dimension = darb::ProbeDimension::Trees;
    p.prompts = {"a street-view photo showing fallen trees", "a street-view photo showing snapped trunks"};
    return p;
}

// Pinned digests of the files written from the values above.
inline constexpr const char* kManifestSha = "8d7d9abce9e01ed56a634baaed6d71bc5e468ab9d88aa722d81beac4d81de955";
inline constexpr const char* kEmbeddingsSha = "49471b5899710821abb92543877ecf6a42706767fad2a54f2a8b4dc806633395";
inline constexpr const char* kPredictionsSha = "cc17f03bbe4056fc441d9c005f28ffd4ca6fdc42c836e30647f67c89acd5e71b";
inline constexpr const char* kPromptsSha = "29c31a451384d9fe0e0189353dd4e59d988a252a2086a51372fc688b4ad23576";

// Writes manifest.jsonl, embeddings.darb, predictions.jsonl, prompts_trees.json into dir.
inline void write_all(const std::filesystem::path& dir) {
    const auto m = manifest();
    darb::write_manifest(m, dir / "manifest.jsonl");
    darb::write_embeddings(embeddings(), dir / "embeddings.darb");
    darb::write_predictions(dir / "predictions.jsonl", m, "image_only", predictions());
    darb::write_prompt_set(prompts(), dir / "prompts_trees.json");
}

}  // namespace golden
