#pragma once
// Fusion head over frozen embeddings.
//
//   a = norm(W_img x)    b = norm(W_txt t)    z = [a ; b]
//   p = softmax(W_head z + b_head)
//   L = lambda * InfoNCE(a, b; tau) + (1 - lambda) * mean CE(p, y)
//
// Image-only / text-only modes zero-fill the absent half of z and drop the
// contrastive term. Gradients are derived by hand (see loss_and_gradients).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "darb/core.hpp"
#include "darb/interchange.hpp"

namespace darb {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

enum class FusionMode : std::uint8_t { ImageOnly = 0, TextOnly = 1, Fused = 2 };
std::string_view to_string(FusionMode m) noexcept;
FusionMode parse_fusion_mode(std::string_view text);

struct TrainConfig {
    double lambda_mix = 0.5;
    double tau_contrast = 0.07;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::size_t d_proj = 128;
    std::uint64_t seed = 0;
    FusionMode mode = FusionMode::Fused;

    // lambda actually applied: forced to 0 in unimodal modes.
    double effective_lambda() const noexcept { return mode == FusionMode::Fused ? lambda_mix : 0.0; }
    void validate() const;
    Json to_json() const;
    // Missing keys keep their defaults.
    static TrainConfig from_json(const Json& j);
};

struct FusionParams {
    Mat w_img;   // d_proj x d_img
    Mat w_txt;   // d_proj x d_txt
    Mat w_head;  // 3 x 2*d_proj
    Vec b_head;  // 3
    FusionMode mode = FusionMode::Fused;

    std::size_t d_proj() const noexcept { return static_cast<std::size_t>(w_img.rows()); }
    std::size_t d_img() const noexcept { return static_cast<std::size_t>(w_img.cols()); }
    std::size_t d_txt() const noexcept { return static_cast<std::size_t>(w_txt.cols()); }

    // Random projections ~ N(0, 1/d), head ~ N(0, 0.01^2), zero bias.
    static FusionParams init(std::size_t d_img, std::size_t d_txt, std::size_t d_proj, FusionMode mode,
                             std::uint64_t seed);
    void validate() const;
};

inline constexpr std::array<char, 4> kParamsMagic = {'D', 'A', 'R', 'P'};
inline constexpr std::uint32_t kParamsVersion = 1;

std::vector<std::uint8_t> encode_params(const FusionParams& p);
FusionParams decode_params(std::span<const std::uint8_t> bytes);
void write_params(const FusionParams& p, const fs::path& path);
FusionParams read_params(const fs::path& path);

// Image-query InfoNCE over L2-normalized rows; similarities are row dot products.
double info_nce(const Mat& img_proj, const Mat& txt_proj, double tau);
// Same loss from a precomputed cosine-similarity matrix.
double info_nce_from_similarity(const Mat& sim, double tau);

inline constexpr double kProbFloor = 1e-12;

// Mean of -ln p[truth]; probabilities below kProbFloor are clamped and counted.
double cls_loss(std::span<const ProbTriple> probs, std::span<const Severity> truth, std::size_t* clamped = nullptr);

double total_loss(double contrast, double cls, double lambda_mix);

struct LossBreakdown {
    double total = 0.0;
    double contrast = 0.0;
    double cls = 0.0;
    std::size_t clamped = 0;
};

struct Gradients {
    Mat w_img;
    Mat w_txt;
    Mat w_head;
    Vec b_head;
};

// Rows of x_img / x_txt are samples. In unimodal modes the unused matrix may be empty.
LossBreakdown forward_loss(const FusionParams& p, const Mat& x_img, const Mat& x_txt,
                           std::span<const Severity> labels, double lambda_mix, double tau);
LossBreakdown loss_and_gradients(const FusionParams& p, const Mat& x_img, const Mat& x_txt,
                                 std::span<const Severity> labels, double lambda_mix, double tau, Gradients& grads);

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double mean_contrast = 0.0;
    double mean_cls = 0.0;
};

struct TrainResult {
    FusionParams params;
    std::vector<EpochLog> log;
    std::size_t clamped = 0;
};

// Mini-batch AdamW. `rows` selects the training samples (embedding rows), `labels` aligned with it.
TrainResult train(const EmbeddingMatrix& img, const EmbeddingMatrix& txt, std::span<const std::size_t> rows,
                  std::span<const Severity> labels, const TrainConfig& cfg);

std::string training_log_jsonl(const TrainResult& r);

// Softmax over head logits. Pass an empty span for a modality the mode does not use.
ProbTriple predict_proba(const FusionParams& p, std::span<const float> img, std::span<const float> txt);

std::vector<ProbTriple> predict_rows(const FusionParams& p, const EmbeddingMatrix& img, const EmbeddingMatrix& txt,
                                     std::span<const std::size_t> rows);

struct GradientCheck {
    double max_rel_error = 0.0;
    std::size_t parameters = 0;
};

// Central differences with step h against loss_and_gradients for every parameter.
// Relative error per entry is |a - n| / max(|a| + |n|, floor).
inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckFloor = 1e-3;
GradientCheck gradient_check(const FusionParams& p, const Mat& x_img, const Mat& x_txt,
                             std::span<const Severity> labels, double lambda_mix, double tau);

Mat gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows);

}  // namespace darb
