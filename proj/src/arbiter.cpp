#include "darb/arbiter.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "darb/metrics.hpp"
#include "text_table.hpp"

namespace darb {

// ---------------------------------------------------------------------------
// Feature configuration

FeatureConfig FeatureConfig::conf() { return {"conf", true, false, false, 0.35}; }
FeatureConfig FeatureConfig::conf_unc() { return {"conf+unc", true, true, false, 0.40}; }
FeatureConfig FeatureConfig::conf_unc_probe() { return {"conf+unc+probe", true, true, true, 0.45}; }
FeatureConfig FeatureConfig::probe_only() { return {"probe_only", false, false, true, 0.50}; }

std::vector<FeatureConfig> FeatureConfig::canonical_presets() {
    return {conf(), conf_unc(), conf_unc_probe(), probe_only()};
}

FeatureConfig FeatureConfig::preset(std::string_view name) {
    if (name.starts_with("LOGREG_")) name.remove_prefix(7);
    for (auto p : canonical_presets()) {
        if (p.name == name) return p;
    }
    throw ValidationError("unknown arbiter preset '" + std::string(name) + "'");
}

void FeatureConfig::validate() const {
    if (!use_confidence && !use_uncertainty && !use_probes) {
        throw ValidationError("feature config '" + name + "' enables no feature family");
    }
    if (!(tau_decision >= 0.0 && tau_decision <= 1.0)) throw ValidationError("tau_decision must lie in [0, 1]");
}

std::size_t FeatureConfig::feature_count() const noexcept {
    return (use_confidence ? 2 : 0) + (use_uncertainty ? 2 : 0) + (use_probes ? kNumProbeDims : 0);
}

std::vector<std::string> FeatureConfig::feature_names() const {
    std::vector<std::string> out;
    if (use_confidence) out.insert(out.end(), {"conf_a", "conf_b"});
    if (use_uncertainty) out.insert(out.end(), {"ent_a", "ent_b"});
    if (use_probes) out.insert(out.end(), {"probe_trees", "probe_debris", "probe_infra", "probe_flood"});
    return out;
}

std::string FeatureConfig::features_label() const {
    if (use_probes && !use_confidence && !use_uncertainty) return "Probes only";
    std::vector<std::string> parts;
    if (use_confidence) parts.emplace_back("Confidence");
    if (use_uncertainty) parts.emplace_back("Uncertainty");
    if (use_probes) parts.emplace_back("Semantic Probes");
    if (parts.size() == 1) return parts.front() + " only";
    std::string out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) out += " + " + parts[i];
    return out;
}

std::string FeatureConfig::setting_label() const {
    return "LOGREG_" + name + " [\xCF\x84=" + detail::fixed(tau_decision, 2) + "]";
}

Json FeatureConfig::to_json() const {
    return Json{{"name", name},
                {"use_confidence", use_confidence},
                {"use_uncertainty", use_uncertainty},
                {"use_probes", use_probes},
                {"tau_decision", tau_decision}};
}

FeatureConfig FeatureConfig::from_json(const Json& j) {
    FeatureConfig c;
    try {
        if (j.is_string()) return preset(j.get<std::string>());
        if (!j.is_object()) throw ValidationError("feature config must be a preset name or an object");
        if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
        if (j.contains("name")) c.name = j.at("name").get<std::string>();
        if (j.contains("use_confidence")) c.use_confidence = j.at("use_confidence").get<bool>();
        if (j.contains("use_uncertainty")) c.use_uncertainty = j.at("use_uncertainty").get<bool>();
        if (j.contains("use_probes")) c.use_probes = j.at("use_probes").get<bool>();
        if (j.contains("tau_decision")) c.tau_decision = j.at("tau_decision").get<double>();
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("feature config: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<double> assemble_features(const ProbTriple& a, const ProbTriple& b, const ProbeVector& probes,
                                      const FeatureConfig& cfg) {
    std::vector<double> out;
    out.reserve(cfg.feature_count());
    if (cfg.use_confidence) {
        out.push_back(max_prob(a));
        out.push_back(max_prob(b));
    }
    if (cfg.use_uncertainty) {
        out.push_back(entropy(a));
        out.push_back(entropy(b));
    }
    if (cfg.use_probes) {
        for (double v : probes.v) out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// ln(1 + e^t) without overflow.
double softplus(double t) {
    if (t > 0.0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

double dot(std::span<const double> w, std::span<const double> z) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * z[i];
    return s;
}

// Gradient of the objective, returned as [dw..., db].
std::vector<double> objective_gradient(const std::vector<std::vector<double>>& z, const std::vector<int>& y,
                                       const std::vector<double>& sample_w, double weight_sum,
                                       std::span<const double> w, double b, double reg_l2) {
    const std::size_t d = w.size();
    std::vector<double> g(d + 1, 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double r = sample_w[i] * (sigmoid(dot(w, z[i]) + b) - static_cast<double>(y[i]));
        for (std::size_t k = 0; k < d; ++k) g[k] += r * z[i][k];
        g[d] += r;
    }
    for (std::size_t k = 0; k < d; ++k) g[k] = g[k] / weight_sum + reg_l2 * w[k];
    g[d] /= weight_sum;
    return g;
}

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace

double arbiter_objective(const std::vector<std::vector<double>>& z, const std::vector<int>& y,
                         const std::vector<double>& sample_w, std::span<const double> w, double b, double reg_l2) {
    double loss = 0.0, weight_sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double t = dot(w, z[i]) + b;
        loss += sample_w[i] * (softplus(t) - static_cast<double>(y[i]) * t);
        weight_sum += sample_w[i];
    }
    double norm2 = 0.0;
    for (double v : w) norm2 += v * v;
    return loss / weight_sum + 0.5 * reg_l2 * norm2;
}

ArbiterModel fit_arbiter(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                         const FeatureConfig& cfg, const FitOptions& opt) {
    cfg.validate();
    if (x.empty()) throw ValidationError("empty arbitration training set");
    if (x.size() != y.size()) throw ValidationError("arbitration features and labels differ in length");
    if (!(opt.reg_l2 >= 0.0)) throw ValidationError("reg_l2 must be non-negative");
    const std::size_t width = cfg.feature_count();
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i].size() != width) throw ValidationError("arbitration feature row has the wrong width");
        for (double v : x[i]) {
            if (!std::isfinite(v)) throw ValidationError("non-finite arbitration feature");
        }
        if (y[i] != 0 && y[i] != 1) throw ValidationError("arbitration labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(y[i]);
    }
    if (n_pos == 0 || n_pos == x.size()) throw ValidationError("degenerate arbitration labels");

    ArbiterModel m;
    m.config = cfg;
    m.fit.n_trust_a = n_pos;
    m.fit.n_trust_b = x.size() - n_pos;
    const auto names = cfg.feature_names();
    const double n = static_cast<double>(x.size());
    for (std::size_t k = 0; k < width; ++k) {
        double mean = 0.0;
        for (const auto& row : x) mean += row[k];
        mean /= n;
        double var = 0.0;
        for (const auto& row : x) var += (row[k] - mean) * (row[k] - mean);
        const double sd = std::sqrt(var / n);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            m.fit.dropped_features.push_back(names[k]);
            continue;
        }
        m.kept.push_back(k);
        m.feature_names.push_back(names[k]);
        m.means.push_back(mean);
        m.stds.push_back(sd);
    }
    const std::size_t d = m.kept.size();

    std::vector<std::vector<double>> z(x.size(), std::vector<double>(d));
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) z[i][k] = (x[i][m.kept[k]] - m.means[k]) / m.stds[k];
    }
    std::vector<double> sw(x.size(), 1.0);
    if (opt.balance_classes) {
        const double wp = n / (2.0 * static_cast<double>(n_pos));
        const double wn = n / (2.0 * static_cast<double>(x.size() - n_pos));
        for (std::size_t i = 0; i < x.size(); ++i) sw[i] = y[i] == 1 ? wp : wn;
    }
    double weight_sum = 0.0;
    for (double v : sw) weight_sum += v;

    // Full-batch gradient descent; Armijo backtracking, step allowed to double each iteration.
    // Backtracking stops at 1/L, L an upper bound on the Hessian's largest eigenvalue
    // (trace bound). Sufficient decrease holds there in exact arithmetic, so near the optimum,
    // where the objective difference drops below rounding, that step is taken unconditionally.
    double trace = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double sq = 1.0;
        for (double v : z[i]) sq += v * v;
        trace += sw[i] * sq;
    }
    const double safe_step = 1.0 / (0.25 * trace / weight_sum + opt.reg_l2);
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    double f = arbiter_objective(z, y, sw, w, b, opt.reg_l2);
    m.fit.initial_loss = f;
    double step = 1.0;
    std::vector<double> g = objective_gradient(z, y, sw, weight_sum, w, b, opt.reg_l2);
    std::size_t it = 0;
    for (; it < opt.max_iter; ++it) {
        if (inf_norm(g) < opt.grad_tol) {
            m.fit.converged = true;
            break;
        }
        double g2 = 0.0;
        for (double v : g) g2 += v * v;
        double t = step * 2.0;
        std::vector<double> w_new(d);
        double b_new = b, f_new = f;
        for (;;) {
            if (t <= safe_step) t = safe_step;
            for (std::size_t k = 0; k < d; ++k) w_new[k] = w[k] - t * g[k];
            b_new = b - t * g[d];
            f_new = arbiter_objective(z, y, sw, w_new, b_new, opt.reg_l2);
            if (t == safe_step || f_new <= f - 0.5 * t * g2) break;
            t *= 0.5;
        }
        w = std::move(w_new);
        b = b_new;
        f = f_new;
        step = t;
        g = objective_gradient(z, y, sw, weight_sum, w, b, opt.reg_l2);
    }
    m.fit.iterations = it;
    m.fit.grad_inf_norm = inf_norm(g);
    if (!m.fit.converged && m.fit.grad_inf_norm < opt.grad_tol) m.fit.converged = true;
    m.fit.final_loss = f;
    m.weights = std::move(w);
    m.bias = b;
    return m;
}

double ArbiterModel::score(std::span<const double> raw) const {
    if (raw.size() != config.feature_count()) throw ValidationError("arbiter feature vector has the wrong width");
    double t = bias;
    for (std::size_t k = 0; k < kept.size(); ++k) t += weights[k] * (raw[kept[k]] - means[k]) / stds[k];
    return sigmoid(t);
}

Json ArbiterModel::to_json() const {
    Json j;
    j["config"] = config.to_json();
    j["features"] = feature_names;
    j["kept"] = kept;
    j["weights"] = weights;
    j["bias"] = bias;
    j["means"] = means;
    j["stds"] = stds;
    j["training"] = {{"iterations", fit.iterations},
                     {"initial_loss", fit.initial_loss},
                     {"final_loss", fit.final_loss},
                     {"grad_inf_norm", fit.grad_inf_norm},
                     {"converged", fit.converged},
                     {"n_trust_a", fit.n_trust_a},
                     {"n_trust_b", fit.n_trust_b},
                     {"dropped_features", fit.dropped_features}};
    return j;
}

ArbiterModel ArbiterModel::from_json(const Json& j) {
    ArbiterModel m;
    try {
        m.config = FeatureConfig::from_json(j.at("config"));
        m.feature_names = j.at("features").get<std::vector<std::string>>();
        m.kept = j.at("kept").get<std::vector<std::size_t>>();
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<double>();
        m.means = j.at("means").get<std::vector<double>>();
        m.stds = j.at("stds").get<std::vector<double>>();
        if (j.contains("training")) {
            const auto& t = j.at("training");
            m.fit.iterations = t.value("iterations", std::size_t{0});
            m.fit.initial_loss = t.value("initial_loss", 0.0);
            m.fit.final_loss = t.value("final_loss", 0.0);
            m.fit.grad_inf_norm = t.value("grad_inf_norm", 0.0);
            m.fit.converged = t.value("converged", false);
            m.fit.n_trust_a = t.value("n_trust_a", std::size_t{0});
            m.fit.n_trust_b = t.value("n_trust_b", std::size_t{0});
            m.fit.dropped_features = t.value("dropped_features", std::vector<std::string>{});
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("arbiter model: ") + e.what());
    }
    const std::size_t d = m.kept.size();
    if (m.weights.size() != d || m.means.size() != d || m.stds.size() != d || m.feature_names.size() != d) {
        throw ValidationError("arbiter model: inconsistent vector lengths");
    }
    for (std::size_t k = 0; k < d; ++k) {
        if (m.kept[k] >= m.config.feature_count()) throw ValidationError("arbiter model: feature index out of range");
        if (!(m.stds[k] > 0.0)) throw ValidationError("arbiter model: non-positive std");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Arbitration

std::string_view to_string(Source s) noexcept {
    switch (s) {
        case Source::Agreement: return "agreement";
        case Source::ArbiterA: return "arbiter_a";
        case Source::ArbiterB: return "arbiter_b";
    }
    return "unknown";
}

Source parse_source(std::string_view text) {
    if (text == "agreement") return Source::Agreement;
    if (text == "arbiter_a") return Source::ArbiterA;
    if (text == "arbiter_b") return Source::ArbiterB;
    throw ValidationError("unknown outcome source '" + std::string(text) + "'");
}

ArbitrationOutcome arbitrate_features(const ProbTriple& a, const ProbTriple& b, std::span<const double> raw,
                                      const ArbiterModel& model) {
    ArbitrationOutcome o;
    o.pred_a = argmax_class(a);
    o.pred_b = argmax_class(b);
    if (o.pred_a == o.pred_b) {
        o.final_label = o.pred_a;
        o.source = Source::Agreement;
        return o;
    }
    const double s = model.score(raw);
    o.score = s;
    if (s >= model.config.tau_decision) {
        o.final_label = o.pred_a;
        o.source = Source::ArbiterA;
    } else {
        o.final_label = o.pred_b;
        o.source = Source::ArbiterB;
    }
    return o;
}

ArbitrationOutcome arbitrate(const ProbTriple& a, const ProbTriple& b, const ProbeVector& probes,
                             const ArbiterModel& model) {
    if (argmax_class(a) == argmax_class(b)) return arbitrate_features(a, b, {}, model);
    const auto raw = assemble_features(a, b, probes, model.config);
    return arbitrate_features(a, b, raw, model);
}

void ArbitrationInputs::validate(bool need_probes) const {
    const std::size_t n = pred_a.size();
    if (pred_b.size() != n || truth.size() != n) throw ValidationError("arbitration inputs differ in length");
    if (!ids.empty() && ids.size() != n) throw ValidationError("arbitration ids differ in length");
    if (need_probes && probes.size() != n) throw ValidationError("probe features missing for arbitration");
}

namespace {

ProbeVector probes_at(const ArbitrationInputs& in, std::size_t i) {
    return in.probes.empty() ? ProbeVector{} : in.probes[i];
}

}  // namespace

TrustSet build_trust_set(const ArbitrationInputs& in, std::span<const std::size_t> subset, const FeatureConfig& cfg) {
    in.validate(cfg.use_probes);
    TrustSet t;
    for (auto i : subset) {
        const Severity pa = argmax_class(in.pred_a[i]);
        const Severity pb = argmax_class(in.pred_b[i]);
        if (pa == pb) continue;
        const bool a_ok = pa == in.truth[i];
        const bool b_ok = pb == in.truth[i];
        if (a_ok == b_ok) continue;
        t.x.push_back(assemble_features(in.pred_a[i], in.pred_b[i], probes_at(in, i), cfg));
        t.y.push_back(a_ok ? 1 : 0);
        t.index.push_back(i);
    }
    return t;
}

CrossFit cross_fit_arbitrate(const ArbitrationInputs& in, std::span<const std::size_t> fold_of, std::size_t k,
                             const FeatureConfig& cfg, const FitOptions& opt) {
    cfg.validate();
    in.validate(cfg.use_probes);
    if (fold_of.size() != in.size()) throw ValidationError("fold assignment does not cover the inputs");
    CrossFit out;
    out.outcomes.resize(in.size());
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx;
        std::vector<std::size_t> held;
        for (std::size_t i = 0; i < in.size(); ++i) (fold_of[i] == f ? held : train_idx).push_back(i);
        const auto ts = build_trust_set(in, train_idx, cfg);
        ArbiterModel model;
        try {
            model = fit_arbiter(ts.x, ts.y, cfg, opt);
        } catch (const ValidationError& e) {
            throw Error("arbiter fit failed for fold " + std::to_string(f) + ": " + e.what());
        }
        for (auto i : held) {
            auto o = arbitrate(in.pred_a[i], in.pred_b[i], probes_at(in, i), model);
            if (!in.ids.empty()) o.id = in.ids[i];
            out.outcomes[i] = std::move(o);
        }
        out.fold_models.push_back(std::move(model));
    }
    return out;
}

AblationTable run_ablation(const ArbitrationInputs& in, std::span<const FeatureConfig> presets,
                           std::span<const std::size_t> fold_of, std::size_t k, const FitOptions& opt) {
    AblationTable table;
    for (const auto& preset : presets) {
        AblationRow row;
        row.preset = preset;
        CrossFit cf;
        try {
            cf = cross_fit_arbitrate(in, fold_of, k, preset, opt);
        } catch (const Error& e) {
            row.skipped = true;
            row.warning = "preset " + preset.name + " skipped: " + e.what();
            table.warnings.push_back(row.warning);
            table.rows.push_back(std::move(row));
            continue;
        }
        ConfusionMatrix trust(2);
        std::size_t final_ok = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
            const auto& o = cf.outcomes[i];
            if (o.source == Source::Agreement) continue;
            ++row.n_disagreements;
            if (o.final_label == in.truth[i]) ++final_ok;
            const bool a_ok = o.pred_a == in.truth[i];
            const bool b_ok = o.pred_b == in.truth[i];
            if (a_ok == b_ok) continue;
            trust.add(a_ok ? 1 : 0, o.source == Source::ArbiterA ? 1 : 0);
        }
        row.n_trust_cases = trust.total();
        if (trust.total() > 0) {
            const auto rep = evaluate(trust);
            row.accuracy = rep.accuracy;
            row.macro_f1 = rep.f1_macro;
        }
        if (row.n_disagreements > 0) {
            row.final_accuracy = static_cast<double>(final_ok) / static_cast<double>(row.n_disagreements);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

Json ablation_to_json(const AblationTable& t) {
    Json rows = Json::array();
    for (const auto& r : t.rows) {
        Json j;
        j["setting"] = r.preset.setting_label();
        j["features"] = r.preset.features_label();
        j["config"] = r.preset.to_json();
        j["skipped"] = r.skipped;
        if (r.skipped) {
            j["warning"] = r.warning;
        } else {
            j["accuracy"] = r.accuracy;
            j["macro_f1"] = r.macro_f1;
            j["n_trust_cases"] = r.n_trust_cases;
            j["final_accuracy"] = r.final_accuracy;
            j["n_disagreements"] = r.n_disagreements;
        }
        rows.push_back(std::move(j));
    }
    return Json{{"rows", rows}, {"warnings", t.warnings}};
}

std::string format_ablation_table(const AblationTable& t) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"Arbitration Setting", "Features Used", "Accuracy", "Macro-F1"});
    for (const auto& r : t.rows) {
        if (r.skipped) {
            cells.push_back({r.preset.setting_label(), r.preset.features_label(), "skipped", "skipped"});
        } else {
            cells.push_back({r.preset.setting_label(), r.preset.features_label(), detail::fixed(r.accuracy, 3),
                             detail::fixed(r.macro_f1, 3)});
        }
    }
    return detail::format_table(cells);
}

Json outcome_to_json(const ArbitrationOutcome& o) {
    Json j;
    j["id"] = o.id;
    j["final"] = std::string(to_string(o.final_label));
    j["source"] = std::string(to_string(o.source));
    j["pred_a"] = std::string(to_string(o.pred_a));
    j["pred_b"] = std::string(to_string(o.pred_b));
    if (o.score) j["score"] = *o.score;
    return j;
}

ArbitrationOutcome outcome_from_json(const Json& j) {
    ArbitrationOutcome o;
    try {
        o.id = j.at("id").get<std::string>();
        o.final_label = parse_severity(j.at("final").get<std::string>());
        o.source = parse_source(j.at("source").get<std::string>());
        o.pred_a = parse_severity(j.at("pred_a").get<std::string>());
        o.pred_b = parse_severity(j.at("pred_b").get<std::string>());
        if (j.contains("score")) o.score = j.at("score").get<double>();
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("arbitration outcome: ") + e.what());
    }
    if ((o.source == Source::Agreement) != (o.pred_a == o.pred_b)) {
        throw ValidationError("arbitration outcome " + o.id + ": source inconsistent with base predictions");
    }
    if (o.final_label != o.pred_a && o.final_label != o.pred_b) {
        throw ValidationError("arbitration outcome " + o.id + ": final class is neither candidate");
    }
    return o;
}

std::vector<ArbitrationOutcome> read_outcomes(const fs::path& path, const Manifest& manifest) {
    std::istringstream in(read_text_file(path));
    std::vector<std::optional<ArbitrationOutcome>> slots(manifest.size());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception&) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": malformed JSON");
        }
        auto o = outcome_from_json(j);
        const auto idx = manifest.find(o.id);
        if (!idx) throw ValidationError(path.string() + ": unknown id '" + o.id + "'");
        if (slots[*idx]) throw ValidationError(path.string() + ": duplicate id '" + o.id + "'");
        slots[*idx] = std::move(o);
    }
    std::vector<ArbitrationOutcome> out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) throw ValidationError(path.string() + ": no outcome for '" + manifest.samples[i].id + "'");
        out.push_back(std::move(*slots[i]));
    }
    return out;
}

}  // namespace darb
