#include "darb/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace darb::synth {

namespace {

const std::array<std::vector<std::string>, kNumClasses> kFragments = {{
    {"a few small branches on the lawn", "scattered leaves along the sidewalk", "minor shingle damage on one roof",
     "light debris near the curb", "a leaning fence in a front yard", "wet pavement after the storm"},
    {"fallen tree branches blocking part of the road", "piles of debris stacked by the driveway",
     "a damaged fence and broken signs", "shallow water pooling near the curb", "a snapped tree trunk beside a house",
     "roof panels torn loose and lying in the yard"},
    {"downed power lines across the street", "deep flood water submerging parked cars",
     "collapsed walls and heavy rubble", "uprooted trees lying on crushed roofs", "a bridge railing torn away",
     "wreckage from destroyed homes filling the road"},
}};

const std::vector<std::string> kOpeners = {"the street view shows", "this scene contains", "the picture captures",
                                           "in this neighborhood there is"};

std::string make_caption(Severity label, Rng& rng) {
    const auto& pool = kFragments[index_of(label)];
    const auto first = rng.below(pool.size());
    auto second = rng.below(pool.size() - 1);
    if (second >= first) ++second;
    std::string out = kOpeners[rng.below(kOpeners.size())];
    out += " " + pool[first] + " and " + pool[second];
    return out;
}

std::string sample_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%05zu", i);
    return buf;
}

const std::array<std::vector<std::string>, kNumProbeDims> kProbeWords = {{
    {"fallen trees", "broken branches", "uprooted tree", "snapped trunk", "tree limbs", "leaning tree"},
    {"debris", "rubble", "wreckage", "scattered roofing", "broken fences", "piled debris"},
    {"power lines", "utility pole", "damaged bridge", "downed lines", "broken signal", "road damage"},
    {"flood water", "flooding", "submerged cars", "standing water", "inundated street", "water damage"},
}};

}  // namespace

ProbTriple random_triple(Rng& rng) {
    // Sorted uniforms give a uniform point on the simplex.
    double u = rng.uniform(), v = rng.uniform();
    if (u > v) std::swap(u, v);
    return ProbTriple::from_raw(u, v - u, 1.0 - v);
}

Dataset make_dataset(const DatasetOptions& opt) {
    if (opt.dim == 0) throw ValidationError("synthetic dataset: dim must be positive");
    Rng rng(opt.seed);
    std::vector<Severity> labels;
    for (auto s : kAllSeverities) labels.insert(labels.end(), opt.class_counts[index_of(s)], s);
    if (labels.empty()) throw ValidationError("synthetic dataset: no samples requested");
    rng.shuffle(std::span<Severity>(labels));

    // Class centroids for both modalities.
    auto centroid = [&](double scale) {
        std::vector<double> c(opt.dim);
        double n = 0.0;
        for (auto& x : c) {
            x = rng.normal();
            n += x * x;
        }
        n = std::sqrt(n);
        for (auto& x : c) x = x / n * scale;
        return c;
    };
    std::array<std::vector<double>, kNumClasses> mu_img, mu_txt;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        mu_img[c] = centroid(opt.separation);
        mu_txt[c] = centroid(opt.separation);
    }

    Dataset ds;
    const std::size_t n = labels.size();
    ds.image = EmbeddingMatrix(n, opt.dim);
    ds.text = EmbeddingMatrix(n, opt.dim);
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = index_of(labels[i]);
        auto xi = ds.image.row(i);
        auto xt = ds.text.row(i);
        for (std::size_t k = 0; k < opt.dim; ++k) {
            const double shared = opt.noise * rng.normal();
            xi[k] = static_cast<float>(mu_img[c][k] + shared);
            xt[k] = static_cast<float>(mu_txt[c][k] + 0.5 * shared + opt.noise * rng.normal());
        }
        Sample s;
        s.id = sample_id(i);
        s.lat = std::round(rng.uniform(26.0, 27.0) * 1e6) / 1e6;
        s.lon = std::round(rng.uniform(-82.5, -81.5) * 1e6) / 1e6;
        s.label = labels[i];
        s.caption_llm = make_caption(labels[i], rng);
        s.caption_human = make_caption(labels[i], rng);
        s.image = "images/" + s.id + ".jpg";
        s.row = i;
        samples.push_back(std::move(s));
    }
    ds.manifest = make_manifest(std::move(samples));

    for (auto d : kAllProbeDims) {
        PromptSet set;
        set.dimension = d;
        const auto& words = kProbeWords[index_of(d)];
        const std::size_t count = std::min(opt.prompts_per_dim, words.size());
        for (std::size_t k = 0; k < count; ++k) set.prompts.push_back("a street-view photo showing " + words[k]);
        EmbeddingMatrix emb(count, opt.dim);
        for (std::size_t r = 0; r < count; ++r) {
            for (auto& x : emb.row(r)) x = static_cast<float>(rng.normal());
        }
        set.embeddings = std::move(emb);
        ds.prompts[index_of(d)] = std::move(set);
    }
    return ds;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    write_manifest(ds.manifest, dir / "manifest.jsonl");
    write_embeddings(ds.image, dir / "image.darb");
    write_embeddings(ds.text, dir / "text.darb");
    std::ostringstream caps;
    for (const auto& s : ds.manifest.samples) {
        Json j;
        j["id"] = s.id;
        j["description"] = s.caption_llm.value_or("");
        caps << j.dump() << '\n';
    }
    write_text_file(dir / "captions.jsonl", caps.str());
    for (const auto& set : ds.prompts) {
        const auto json_path = dir / "prompts" / prompt_file_name(set.dimension);
        write_prompt_set(set, json_path);
        if (set.embeddings) {
            auto blob = json_path;
            blob.replace_extension(".darb");
            write_embeddings(*set.embeddings, blob);
        }
    }
}

namespace {

// Distribution with `c` on class `top` and the remainder split at random.
ProbTriple peaked(Severity top, double c, Rng& rng) {
    std::array<double, kNumClasses> p{};
    const double share = rng.uniform(0.3, 0.7);
    std::size_t k = 0;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (i == index_of(top)) {
            p[i] = c;
        } else {
            p[i] = (k++ == 0 ? share : 1.0 - share) * (1.0 - c);
        }
    }
    return ProbTriple::from_raw(p);
}

Severity other_than(Severity a, Rng& rng) {
    const auto off = 1 + rng.below(kNumClasses - 1);
    return severity_from_index((index_of(a) + off) % kNumClasses);
}

Severity third_class(Severity a, Severity b) {
    for (auto s : kAllSeverities) {
        if (s != a && s != b) return s;
    }
    return a;
}

}  // namespace

ArbitrationFixture make_arbitration_fixture(std::span<const Severity> truth, const FixtureOptions& opt) {
    if (!(opt.both_wrong_rate >= 0.0 && opt.both_wrong_rate <= opt.a_wrong_rate && opt.a_wrong_rate <= 1.0)) {
        throw ValidationError("fixture rates must satisfy 0 <= both_wrong_rate <= a_wrong_rate <= 1");
    }
    Rng rng(opt.seed);
    ArbitrationFixture fx;
    for (auto y : truth) {
        const double u = rng.uniform();
        if (u < opt.a_wrong_rate) {
            const Severity wrong = other_than(y, rng);
            const double pw = rng.uniform(0.80, 0.90);
            const double pt = rng.uniform(0.0, 0.5) * (1.0 - pw);
            std::array<double, kNumClasses> pa{};
            pa[index_of(wrong)] = pw;
            pa[index_of(y)] = pt;
            pa[index_of(third_class(y, wrong))] = 1.0 - pw - pt;
            fx.a.push_back(ProbTriple::from_raw(pa));
            if (u < opt.a_wrong_rate - opt.both_wrong_rate) {
                fx.b.push_back(peaked(y, rng.uniform(0.52, 0.60), rng));
            } else {
                // B picks the remaining class, narrowly ahead of the truth.
                const Severity b_wrong = third_class(y, wrong);
                const double c = rng.uniform(0.52, 0.56);
                const double pt_b = rng.uniform(0.80, 0.95) * (1.0 - c);
                std::array<double, kNumClasses> pb{};
                pb[index_of(b_wrong)] = c;
                pb[index_of(y)] = pt_b;
                pb[index_of(wrong)] = 1.0 - c - pt_b;
                fx.b.push_back(ProbTriple::from_raw(pb));
            }
        } else {
            fx.a.push_back(peaked(y, rng.uniform(0.95, 0.99), rng));
            if (rng.uniform() < opt.b_wrong_rate) {
                const Severity wrong = other_than(y, rng);
                const double c = rng.uniform(0.38, 0.46);
                const double delta = rng.uniform(0.02, 0.08);
                std::array<double, kNumClasses> pb{};
                pb[index_of(wrong)] = c;
                pb[index_of(y)] = c - delta;
                pb[index_of(third_class(y, wrong))] = 1.0 - 2.0 * c + delta;
                fx.b.push_back(ProbTriple::from_raw(pb));
            } else {
                fx.b.push_back(peaked(y, rng.uniform(0.52, 0.60), rng));
            }
        }
        ProbeVector pv;
        for (auto& v : pv.v) v = rng.uniform(-0.1, 0.4);
        fx.probes.push_back(pv);
    }
    return fx;
}

}  // namespace darb::synth
