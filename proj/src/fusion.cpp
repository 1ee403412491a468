#include "darb/fusion.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include "darb/rng.hpp"

namespace darb {

std::string_view to_string(FusionMode m) noexcept {
    switch (m) {
        case FusionMode::ImageOnly: return "image_only";
        case FusionMode::TextOnly: return "text_only";
        case FusionMode::Fused: return "fused";
    }
    return "unknown";
}

FusionMode parse_fusion_mode(std::string_view text) {
    if (text == "image_only") return FusionMode::ImageOnly;
    if (text == "text_only") return FusionMode::TextOnly;
    if (text == "fused") return FusionMode::Fused;
    throw ValidationError("unknown fusion mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
    if (!(lambda_mix >= 0.0 && lambda_mix <= 1.0)) throw ValidationError("lambda_mix must lie in [0, 1]");
    if (!(tau_contrast > 0.0)) throw ValidationError("tau_contrast must be positive");
    if (!(lr > 0.0)) throw ValidationError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (epochs == 0) throw ValidationError("epochs must be positive");
    if (d_proj == 0) throw ValidationError("d_proj must be positive");
}

Json TrainConfig::to_json() const {
    Json j;
    j["mode"] = std::string(to_string(mode));
    j["lambda_mix"] = lambda_mix;
    j["lambda_effective"] = effective_lambda();
    j["tau_contrast"] = tau_contrast;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["d_proj"] = d_proj;
    j["seed"] = seed;
    return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
    TrainConfig c;
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    try {
        if (j.contains("mode")) c.mode = parse_fusion_mode(j.at("mode").get<std::string>());
        if (j.contains("lambda_mix")) c.lambda_mix = j.at("lambda_mix").get<double>();
        if (j.contains("tau_contrast")) c.tau_contrast = j.at("tau_contrast").get<double>();
        if (j.contains("lr")) c.lr = j.at("lr").get<double>();
        if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("d_proj")) c.d_proj = j.at("d_proj").get<std::size_t>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters

FusionParams FusionParams::init(std::size_t d_img, std::size_t d_txt, std::size_t d_proj, FusionMode mode,
                                std::uint64_t seed) {
    if (d_img == 0 || d_txt == 0 || d_proj == 0) throw ValidationError("fusion params: zero dimension");
    Rng rng(seed);
    FusionParams p;
    p.mode = mode;
    p.w_img.resize(static_cast<Eigen::Index>(d_proj), static_cast<Eigen::Index>(d_img));
    p.w_txt.resize(static_cast<Eigen::Index>(d_proj), static_cast<Eigen::Index>(d_txt));
    p.w_head.resize(3, static_cast<Eigen::Index>(2 * d_proj));
    const double s_img = 1.0 / std::sqrt(static_cast<double>(d_img));
    const double s_txt = 1.0 / std::sqrt(static_cast<double>(d_txt));
    for (Eigen::Index i = 0; i < p.w_img.size(); ++i) p.w_img.data()[i] = s_img * rng.normal();
    for (Eigen::Index i = 0; i < p.w_txt.size(); ++i) p.w_txt.data()[i] = s_txt * rng.normal();
    for (Eigen::Index i = 0; i < p.w_head.size(); ++i) p.w_head.data()[i] = 0.01 * rng.normal();
    p.b_head = Vec::Zero(3);
    return p;
}

void FusionParams::validate() const {
    if (w_img.rows() == 0 || w_img.rows() != w_txt.rows()) throw ValidationError("fusion params: projection shapes differ");
    if (w_head.rows() != 3 || w_head.cols() != 2 * w_img.rows()) throw ValidationError("fusion params: head shape");
    if (b_head.size() != 3) throw ValidationError("fusion params: bias shape");
    if (!w_img.allFinite() || !w_txt.allFinite() || !w_head.allFinite() || !b_head.allFinite()) {
        throw ValidationError("fusion params: non-finite entry");
    }
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[offset + i]) << (8 * i);
    return value;
}

void put_doubles(std::vector<std::uint8_t>& out, const double* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(data[i]));
}

constexpr std::size_t kParamsHeaderBytes = 4 + 4 + 4 + 8 + 8 + 8;

}  // namespace

std::vector<std::uint8_t> encode_params(const FusionParams& p) {
    p.validate();
    std::vector<std::uint8_t> out;
    for (char c : kParamsMagic) out.push_back(static_cast<std::uint8_t>(c));
    put_le<std::uint32_t>(out, kParamsVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.mode));
    put_le<std::uint64_t>(out, p.d_img());
    put_le<std::uint64_t>(out, p.d_txt());
    put_le<std::uint64_t>(out, p.d_proj());
    put_doubles(out, p.w_img.data(), p.w_img.size());
    put_doubles(out, p.w_txt.data(), p.w_txt.size());
    put_doubles(out, p.w_head.data(), p.w_head.size());
    put_doubles(out, p.b_head.data(), p.b_head.size());
    return out;
}

FusionParams decode_params(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kParamsHeaderBytes) throw ValidationError("fusion params truncated: header incomplete");
    for (std::size_t i = 0; i < 4; ++i) {
        if (bytes[i] != static_cast<std::uint8_t>(kParamsMagic[i])) throw ValidationError("fusion params: bad magic");
    }
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kParamsVersion) throw ValidationError("fusion params: unsupported version " + std::to_string(version));
    const auto mode = get_le<std::uint32_t>(bytes, 8);
    if (mode > 2) throw ValidationError("fusion params: bad mode");
    const auto d_img = get_le<std::uint64_t>(bytes, 12);
    const auto d_txt = get_le<std::uint64_t>(bytes, 20);
    const auto d_proj = get_le<std::uint64_t>(bytes, 28);
    const std::uint64_t limit = bytes.size() / 8;
    if (d_img > limit || d_txt > limit || d_proj > limit) throw ValidationError("fusion params truncated");
    const std::uint64_t count = d_proj * d_img + d_proj * d_txt + 3 * 2 * d_proj + 3;
    if (bytes.size() - kParamsHeaderBytes != count * 8) {
        throw ValidationError("fusion params truncated: payload does not match header shape");
    }
    FusionParams p;
    p.mode = static_cast<FusionMode>(mode);
    p.w_img.resize(static_cast<Eigen::Index>(d_proj), static_cast<Eigen::Index>(d_img));
    p.w_txt.resize(static_cast<Eigen::Index>(d_proj), static_cast<Eigen::Index>(d_txt));
    p.w_head.resize(3, static_cast<Eigen::Index>(2 * d_proj));
    p.b_head.resize(3);
    std::size_t off = kParamsHeaderBytes;
    auto fill = [&](double* data, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i, off += 8) data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, off));
    };
    fill(p.w_img.data(), p.w_img.size());
    fill(p.w_txt.data(), p.w_txt.size());
    fill(p.w_head.data(), p.w_head.size());
    fill(p.b_head.data(), p.b_head.size());
    p.validate();
    return p;
}

void write_params(const FusionParams& p, const fs::path& path) {
    const auto bytes = encode_params(p);
    write_text_file(path, std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

FusionParams read_params(const fs::path& path) {
    const auto raw = read_text_file(path);
    try {
        return decode_params(
            std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Losses

double info_nce_from_similarity(const Mat& sim, double tau) {
    if (!(tau > 0.0)) throw ValidationError("info_nce: tau must be positive");
    if (sim.rows() == 0 || sim.rows() != sim.cols()) throw ValidationError("info_nce: need a square, non-empty batch");
    const Eigen::Index n = sim.rows();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double hi = sim.row(i).maxCoeff() / tau;
        double denom = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) denom += std::exp(sim(i, j) / tau - hi);
        loss += std::log(denom) + hi - sim(i, i) / tau;
    }
    return std::max(0.0, loss / static_cast<double>(n));
}

namespace {

Mat normalize_rows(const Mat& m, Vec* norms = nullptr) {
    Mat out = m;
    if (norms) norms->resize(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (!(n > 0.0)) throw ValidationError("zero-norm embedding row " + std::to_string(i));
        out.row(i) /= n;
        if (norms) (*norms)(i) = n;
    }
    return out;
}

}  // namespace

double info_nce(const Mat& img_proj, const Mat& txt_proj, double tau) {
    if (img_proj.rows() != txt_proj.rows() || img_proj.cols() != txt_proj.cols()) {
        throw ValidationError("info_nce: batch shapes differ");
    }
    const Mat a = normalize_rows(img_proj);
    const Mat b = normalize_rows(txt_proj);
    return info_nce_from_similarity(a * b.transpose(), tau);
}

double cls_loss(std::span<const ProbTriple> probs, std::span<const Severity> truth, std::size_t* clamped) {
    if (probs.empty()) throw ValidationError("cls_loss: empty batch");
    if (probs.size() != truth.size()) throw ValidationError("cls_loss: length mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double p = probs[i][truth[i]];
        if (p < kProbFloor) {
            p = kProbFloor;
            if (clamped) ++*clamped;
        }
        loss -= std::log(p);
    }
    return loss / static_cast<double>(probs.size());
}

double total_loss(double contrast, double cls, double lambda_mix) {
    return lambda_mix * contrast + (1.0 - lambda_mix) * cls;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct Forward {
    Mat a, b;          // normalized projections (empty when the modality is unused)
    Vec na, nb;        // pre-normalization norms
    Mat z;             // combined embedding
    Mat probs;         // N x 3
    Mat sim;           // a b^T when both modalities are present
    LossBreakdown loss;
};

Forward run_forward(const FusionParams& p, const Mat& x_img, const Mat& x_txt, std::span<const Severity> labels,
                    double lambda_mix, double tau) {
    const bool use_img = p.mode != FusionMode::TextOnly;
    const bool use_txt = p.mode != FusionMode::ImageOnly;
    const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
    const Eigen::Index dp = static_cast<Eigen::Index>(p.d_proj());
    if (n == 0) throw ValidationError("empty batch");
    if (use_img && (x_img.rows() != n || x_img.cols() != p.w_img.cols())) {
        throw ValidationError("image batch shape does not match parameters");
    }
    if (use_txt && (x_txt.rows() != n || x_txt.cols() != p.w_txt.cols())) {
        throw ValidationError("text batch shape does not match parameters");
    }
    Forward f;
    f.z = Mat::Zero(n, 2 * dp);
    if (use_img) {
        f.a = normalize_rows(x_img * p.w_img.transpose(), &f.na);
        f.z.leftCols(dp) = f.a;
    }
    if (use_txt) {
        f.b = normalize_rows(x_txt * p.w_txt.transpose(), &f.nb);
        f.z.rightCols(dp) = f.b;
    }
    Mat logits = f.z * p.w_head.transpose();
    logits.rowwise() += p.b_head.transpose();
    f.probs.resize(n, 3);
    double cls = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double hi = logits.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < 3; ++c) {
            f.probs(i, c) = std::exp(logits(i, c) - hi);
            sum += f.probs(i, c);
        }
        f.probs.row(i) /= sum;
        double pt = f.probs(i, static_cast<Eigen::Index>(index_of(labels[static_cast<std::size_t>(i)])));
        if (pt < kProbFloor) {
            pt = kProbFloor;
            ++f.loss.clamped;
        }
        cls -= std::log(pt);
    }
    f.loss.cls = cls / static_cast<double>(n);
    if (use_img && use_txt) {
        f.sim = f.a * f.b.transpose();
        f.loss.contrast = info_nce_from_similarity(f.sim, tau);
    }
    f.loss.total = total_loss(f.loss.contrast, f.loss.cls, lambda_mix);
    return f;
}

// d/du of u/|u| applied to upstream gradient g, row-wise.
Mat normalize_backward(const Mat& unit, const Vec& norms, const Mat& g) {
    Mat out(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double proj = unit.row(i).dot(g.row(i));
        out.row(i) = (g.row(i) - proj * unit.row(i)) / norms(i);
    }
    return out;
}

}  // namespace

LossBreakdown forward_loss(const FusionParams& p, const Mat& x_img, const Mat& x_txt,
                           std::span<const Severity> labels, double lambda_mix, double tau) {
    return run_forward(p, x_img, x_txt, labels, lambda_mix, tau).loss;
}

LossBreakdown loss_and_gradients(const FusionParams& p, const Mat& x_img, const Mat& x_txt,
                                 std::span<const Severity> labels, double lambda_mix, double tau, Gradients& grads) {
    const Forward f = run_forward(p, x_img, x_txt, labels, lambda_mix, tau);
    const Eigen::Index n = f.probs.rows();
    const Eigen::Index dp = static_cast<Eigen::Index>(p.d_proj());
    const double inv_n = 1.0 / static_cast<double>(n);

    // Cross-entropy through softmax: (p - onehot) per sample. A clamped sample
    // sits on the flat part of the clamp and contributes nothing.
    Mat g_logits = f.probs;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto y = static_cast<Eigen::Index>(index_of(labels[static_cast<std::size_t>(i)]));
        if (f.probs(i, y) < kProbFloor) {
            g_logits.row(i).setZero();
            continue;
        }
        g_logits(i, y) -= 1.0;
    }
    g_logits *= (1.0 - lambda_mix) * inv_n;

    grads.w_head = g_logits.transpose() * f.z;
    grads.b_head = g_logits.colwise().sum().transpose();
    const Mat g_z = g_logits * p.w_head;

    Mat g_a, g_b;
    if (f.a.size() != 0) g_a = g_z.leftCols(dp);
    if (f.b.size() != 0) g_b = g_z.rightCols(dp);

    if (f.sim.size() != 0 && lambda_mix != 0.0) {
        // dL/dS_ij = lambda / (N tau) * (softmax_j(S_i. / tau) - delta_ij)
        Mat g_s(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double hi = f.sim.row(i).maxCoeff() / tau;
            double sum = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                g_s(i, j) = std::exp(f.sim(i, j) / tau - hi);
                sum += g_s(i, j);
            }
            g_s.row(i) /= sum;
            g_s(i, i) -= 1.0;
        }
        g_s *= lambda_mix * inv_n / tau;
        g_a += g_s * f.b;
        g_b += g_s.transpose() * f.a;
    }

    grads.w_img = Mat::Zero(p.w_img.rows(), p.w_img.cols());
    grads.w_txt = Mat::Zero(p.w_txt.rows(), p.w_txt.cols());
    if (f.a.size() != 0) grads.w_img = normalize_backward(f.a, f.na, g_a).transpose() * x_img;
    if (f.b.size() != 0) grads.w_txt = normalize_backward(f.b, f.nb, g_b).transpose() * x_txt;
    return f.loss;
}

// ---------------------------------------------------------------------------
// Training

Mat gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.cols()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = m.row(rows[i]);
        for (std::size_t c = 0; c < r.size(); ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r[c];
    }
    return out;
}

namespace {

struct AdamState {
    Mat m, v;
    void init(const Mat& like) {
        m = Mat::Zero(like.rows(), like.cols());
        v = Mat::Zero(like.rows(), like.cols());
    }
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adamw_step(Mat& theta, const Mat& grad, AdamState& s, std::size_t t, double lr, double wd) {
    s.m = kBeta1 * s.m + (1.0 - kBeta1) * grad;
    s.v = kBeta2 * s.v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    theta *= (1.0 - lr * wd);
    theta.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + kAdamEps);
}

}  // namespace

TrainResult train(const EmbeddingMatrix& img, const EmbeddingMatrix& txt, std::span<const std::size_t> rows,
                  std::span<const Severity> labels, const TrainConfig& cfg) {
    cfg.validate();
    if (rows.size() != labels.size()) throw ValidationError("train: rows and labels differ in length");
    if (rows.empty()) throw ValidationError("train: empty training set");
    if (img.rows() != txt.rows()) throw ValidationError("train: image and text matrices differ in row count");
    for (auto r : rows) {
        if (r >= img.rows()) throw ValidationError("train: row index out of range");
    }
    const double lambda = cfg.effective_lambda();

    TrainResult result;
    result.params = FusionParams::init(img.cols(), txt.cols(), cfg.d_proj, cfg.mode, cfg.seed);
    auto& p = result.params;
    const bool use_img = cfg.mode != FusionMode::TextOnly;
    const bool use_txt = cfg.mode != FusionMode::ImageOnly;

    AdamState s_img, s_txt, s_head, s_bias;
    s_img.init(p.w_img);
    s_txt.init(p.w_txt);
    s_head.init(p.w_head);
    Mat bias = p.b_head.transpose();
    s_bias.init(bias);

    Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t step = 0;
    Gradients g;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double sum_total = 0.0, sum_con = 0.0, sum_cls = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            std::vector<std::size_t> batch_rows;
            std::vector<Severity> batch_labels;
            for (std::size_t k = begin; k < end; ++k) {
                batch_rows.push_back(rows[order[k]]);
                batch_labels.push_back(labels[order[k]]);
            }
            const auto diverged = [&] {
                return Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no));
            };
            // Overflowed parameters would otherwise surface as a zero-norm projection.
            if (!p.w_img.allFinite() || !p.w_txt.allFinite() || !p.w_head.allFinite() || !p.b_head.allFinite()) {
                throw diverged();
            }
            const Mat xi = use_img ? gather_rows(img, batch_rows) : Mat();
            const Mat xt = use_txt ? gather_rows(txt, batch_rows) : Mat();
            const auto loss = loss_and_gradients(p, xi, xt, batch_labels, lambda, cfg.tau_contrast, g);
            if (!std::isfinite(loss.total)) throw diverged();
            result.clamped += loss.clamped;
            const double w = static_cast<double>(end - begin);
            sum_total += w * loss.total;
            sum_con += w * loss.contrast;
            sum_cls += w * loss.cls;

            ++step;
            if (use_img) adamw_step(p.w_img, g.w_img, s_img, step, cfg.lr, cfg.weight_decay);
            if (use_txt) adamw_step(p.w_txt, g.w_txt, s_txt, step, cfg.lr, cfg.weight_decay);
            adamw_step(p.w_head, g.w_head, s_head, step, cfg.lr, cfg.weight_decay);
            const Mat gb = g.b_head.transpose();
            adamw_step(bias, gb, s_bias, step, cfg.lr, 0.0);
            p.b_head = bias.transpose();
        }
        const double n = static_cast<double>(order.size());
        result.log.push_back({epoch, sum_total / n, sum_con / n, sum_cls / n});
    }
    return result;
}

std::string training_log_jsonl(const TrainResult& r) {
    std::ostringstream os;
    for (const auto& e : r.log) {
        Json j;
        j["epoch"] = e.epoch;
        j["mean_loss"] = e.mean_loss;
        j["mean_contrast"] = e.mean_contrast;
        j["mean_cls"] = e.mean_cls;
        os << j.dump() << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Inference

ProbTriple predict_proba(const FusionParams& p, std::span<const float> img, std::span<const float> txt) {
    const Eigen::Index dp = static_cast<Eigen::Index>(p.d_proj());
    Vec z = Vec::Zero(2 * dp);
    auto project = [](const Mat& w, std::span<const float> x) {
        if (x.size() != static_cast<std::size_t>(w.cols())) throw ValidationError("embedding dimension does not match parameters");
        Vec xv(w.cols());
        for (std::size_t i = 0; i < x.size(); ++i) xv(static_cast<Eigen::Index>(i)) = x[i];
        Vec u = w * xv;
        const double n = u.norm();
        if (!(n > 0.0)) throw ValidationError("zero-norm projection");
        return Vec(u / n);
    };
    if (p.mode != FusionMode::TextOnly) z.head(dp) = project(p.w_img, img);
    if (p.mode != FusionMode::ImageOnly) z.tail(dp) = project(p.w_txt, txt);
    const Vec logits = p.w_head * z + p.b_head;
    const std::array<double, 3> l{logits(0), logits(1), logits(2)};
    return softmax3(l);
}

std::vector<ProbTriple> predict_rows(const FusionParams& p, const EmbeddingMatrix& img, const EmbeddingMatrix& txt,
                                     std::span<const std::size_t> rows) {
    std::vector<ProbTriple> out;
    out.reserve(rows.size());
    for (auto r : rows) {
        const auto xi = p.mode == FusionMode::TextOnly ? std::span<const float>() : img.row(r);
        const auto xt = p.mode == FusionMode::ImageOnly ? std::span<const float>() : txt.row(r);
        out.push_back(predict_proba(p, xi, xt));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient check

GradientCheck gradient_check(const FusionParams& p, const Mat& x_img, const Mat& x_txt,
                             std::span<const Severity> labels, double lambda_mix, double tau) {
    Gradients analytic;
    loss_and_gradients(p, x_img, x_txt, labels, lambda_mix, tau, analytic);
    FusionParams q = p;
    GradientCheck out;
    auto probe = [&](double* entry, double grad) {
        const double saved = *entry;
        *entry = saved + kGradCheckStep;
        const double up = forward_loss(q, x_img, x_txt, labels, lambda_mix, tau).total;
        *entry = saved - kGradCheckStep;
        const double down = forward_loss(q, x_img, x_txt, labels, lambda_mix, tau).total;
        *entry = saved;
        const double numeric = (up - down) / (2.0 * kGradCheckStep);
        const double rel = std::abs(grad - numeric) / std::max(std::abs(grad) + std::abs(numeric), kGradCheckFloor);
        out.max_rel_error = std::max(out.max_rel_error, rel);
        ++out.parameters;
    };
    const bool use_img = p.mode != FusionMode::TextOnly;
    const bool use_txt = p.mode != FusionMode::ImageOnly;
    if (use_img) {
        for (Eigen::Index i = 0; i < q.w_img.size(); ++i) probe(q.w_img.data() + i, analytic.w_img.data()[i]);
    }
    if (use_txt) {
        for (Eigen::Index i = 0; i < q.w_txt.size(); ++i) probe(q.w_txt.data() + i, analytic.w_txt.data()[i]);
    }
    for (Eigen::Index i = 0; i < q.w_head.size(); ++i) probe(q.w_head.data() + i, analytic.w_head.data()[i]);
    for (Eigen::Index i = 0; i < q.b_head.size(); ++i) probe(q.b_head.data() + i, analytic.b_head(i));
    return out;
}

}  // namespace darb
