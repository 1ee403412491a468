#pragma once
// Independent reference computations used to cross-check the library.
// Deliberately naive: straight loops over raw samples, no shared helpers.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

struct ClassStats {
    double precision = 0, recall = 0, f1 = 0;
    double support = 0;
};

struct Metrics {
    double accuracy = 0;
    std::vector<ClassStats> per_class;
    double precision_w = 0, recall_w = 0, f1_w = 0;
    double precision_m = 0, recall_m = 0, f1_m = 0;
    double mcc = 0;
};

// One-vs-rest tallies straight from the label sequences.
inline Metrics metrics(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
    Metrics m;
    const double n = static_cast<double>(truth.size());
    int hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i];
    m.accuracy = hits / n;
    for (int c = 0; c < k; ++c) {
        int tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (pred[i] == c && truth[i] == c) ++tp;
            if (pred[i] == c && truth[i] != c) ++fp;
            if (pred[i] != c && truth[i] == c) ++fn;
        }
        ClassStats s;
        s.precision = tp + fp ? double(tp) / (tp + fp) : 0.0;
        s.recall = tp + fn ? double(tp) / (tp + fn) : 0.0;
        s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        s.support = tp + fn;
        m.per_class.push_back(s);
    }
    for (const auto& s : m.per_class) {
        m.precision_w += s.support / n * s.precision;
        m.recall_w += s.support / n * s.recall;
        m.f1_w += s.support / n * s.f1;
        m.precision_m += s.precision / k;
        m.recall_m += s.recall / k;
        m.f1_m += s.f1 / k;
    }
    // Correlation of one-hot indicator matrices.
    std::vector<double> mx(k, 0), my(k, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        mx[pred[i]] += 1.0 / n;
        my[truth[i]] += 1.0 / n;
    }
    double cxy = 0, cxx = 0, cyy = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (int c = 0; c < k; ++c) {
            const double x = (pred[i] == c) - mx[c];
            const double y = (truth[i] == c) - my[c];
            cxy += x * y;
            cxx += x * x;
            cyy += y * y;
        }
    }
    m.mcc = cxx > 0 && cyy > 0 ? cxy / std::sqrt(cxx * cyy) : 0.0;
    return m;
}

inline double binary_mcc(double tp, double tn, double fp, double fn) {
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    return den > 0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0;
}

// -(1/N) sum_i ln( exp(S_ii/t) / sum_j exp(S_ij/t) ), straight from the definition.
inline double info_nce(const std::vector<std::vector<double>>& sim, double tau) {
    const std::size_t n = sim.size();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double den = 0;
        for (std::size_t j = 0; j < n; ++j) den += std::exp(sim[i][j] / tau);
        total += std::log(std::exp(sim[i][i] / tau) / den);
    }
    return -total / n;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Head forward pass: normalize(W x) blocks, concatenate, affine, softmax.
inline std::array<double, 3> fusion_forward(const std::vector<std::vector<double>>& w_img,
                                            const std::vector<std::vector<double>>& w_txt,
                                            const std::vector<std::vector<double>>& w_head,
                                            const std::vector<double>& b_head, const std::vector<double>& x,
                                            const std::vector<double>& t, bool use_img, bool use_txt) {
    auto project = [](const std::vector<std::vector<double>>& w, const std::vector<double>& v) {
        std::vector<double> u(w.size(), 0.0);
        double norm = 0;
        for (std::size_t r = 0; r < w.size(); ++r) {
            for (std::size_t c = 0; c < v.size(); ++c) u[r] += w[r][c] * v[c];
            norm += u[r] * u[r];
        }
        norm = std::sqrt(norm);
        for (auto& e : u) e /= norm;
        return u;
    };
    const std::size_t p = w_img.size();
    std::vector<double> z(2 * p, 0.0);
    if (use_img) {
        const auto a = project(w_img, x);
        std::copy(a.begin(), a.end(), z.begin());
    }
    if (use_txt) {
        const auto b = project(w_txt, t);
        std::copy(b.begin(), b.end(), z.begin() + static_cast<long>(p));
    }
    std::array<double, 3> logits{};
    for (int c = 0; c < 3; ++c) {
        logits[c] = b_head[c];
        for (std::size_t j = 0; j < z.size(); ++j) logits[c] += w_head[c][j] * z[j];
    }
    const double mx = std::max({logits[0], logits[1], logits[2]});
    double s = 0;
    for (auto& l : logits) {
        l = std::exp(l - mx);
        s += l;
    }
    for (auto& l : logits) l /= s;
    return logits;
}

// n-gram occurrence counts over whitespace-separated lowercase ASCII captions,
// with the boundary-stopword and numeric-token filters applied.
inline std::map<std::string, std::size_t> ngram_tally(const std::vector<std::string>& captions,
                                                      const std::set<std::string>& stopwords, std::size_t f_min) {
    auto numeric = [](const std::string& t) {
        return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    std::map<std::string, std::size_t> counts;
    for (const auto& cap : captions) {
        std::istringstream in(cap);
        std::vector<std::string> toks;
        for (std::string w; in >> w;) toks.push_back(w);
        for (std::size_t n = 1; n <= 3; ++n) {
            for (std::size_t i = 0; i + n <= toks.size(); ++i) {
                if (stopwords.count(toks[i]) || stopwords.count(toks[i + n - 1])) continue;
                bool bad = false;
                std::string g;
                for (std::size_t j = i; j < i + n; ++j) {
                    bad = bad || numeric(toks[j]);
                    g += (j > i ? " " : "") + toks[j];
                }
                if (!bad) ++counts[g];
            }
        }
    }
    for (auto it = counts.begin(); it != counts.end();) {
        it = it->second < f_min ? counts.erase(it) : std::next(it);
    }
    return counts;
}

}  // namespace oracle
