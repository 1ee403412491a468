#include "darb/interchange.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace darb {

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

namespace {

bool is_blank(const std::string& line) {
    return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

std::string require_string(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        throw ValidationError(std::string("missing string field '") + key + "'");
    }
    return it->get<std::string>();
}

double require_number(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) {
        throw ValidationError(std::string("missing numeric field '") + key + "'");
    }
    return it->get<double>();
}

std::optional<std::string> optional_string(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

std::optional<std::size_t> Manifest::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<Severity> Manifest::labels() const {
    std::vector<Severity> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

void Manifest::reindex() {
    index_.clear();
    class_counts = {};
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.id.empty()) throw ValidationError("sample with empty id");
        if (!(s.lat >= -90.0 && s.lat <= 90.0)) {
            throw ValidationError("latitude out of range for id " + s.id);
        }
        if (!(s.lon >= -180.0 && s.lon <= 180.0)) {
            throw ValidationError("longitude out of range for id " + s.id);
        }
        if (!index_.emplace(s.id, i).second) throw ValidationError("duplicate id " + s.id);
        ++class_counts[index_of(s.label)];
    }
}

Manifest make_manifest(std::vector<Sample> samples) {
    Manifest m;
    m.samples = std::move(samples);
    m.reindex();
    return m;
}

Json sample_to_json(const Sample& s) {
    Json j;
    j["id"] = s.id;
    j["lat"] = s.lat;
    j["lon"] = s.lon;
    j["label"] = std::string(to_string(s.label));
    j["row"] = s.row;
    if (s.caption_human) j["caption_human"] = *s.caption_human;
    if (s.caption_llm) j["caption_llm"] = *s.caption_llm;
    if (s.image) j["image"] = *s.image;
    return j;
}

Sample sample_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("record is not a JSON object");
    Sample s;
    s.id = require_string(j, "id");
    s.lat = require_number(j, "lat");
    s.lon = require_number(j, "lon");
    s.label = parse_severity(require_string(j, "label"));
    s.caption_human = optional_string(j, "caption_human");
    s.caption_llm = optional_string(j, "caption_llm");
    s.image = optional_string(j, "image");
    if (auto it = j.find("row"); it != j.end()) {
        if (!it->is_number_unsigned()) throw ValidationError("field 'row' must be a non-negative integer");
        s.row = it->get<std::size_t>();
    }
    return s;
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string());
    std::vector<Sample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        try {
            Json j = Json::parse(line);
            Sample s = sample_from_json(j);
            if (j.find("row") == j.end()) s.row = samples.size();
            samples.push_back(std::move(s));
        } catch (const Json::exception& e) {
            throw ValidationError("manifest line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (samples.empty()) throw ValidationError("empty manifest");
    return make_manifest(std::move(samples));
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
    std::string text;
    for (const auto& s : manifest.samples) {
        text += sample_to_json(s).dump();
        text += '\n';
    }
    write_text_file(path, text);
}

// ---------------------------------------------------------------------------
// Embedding blobs

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ValidationError("embedding data size does not match shape");
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(bytes[offset + i]) << (8 * i);
    }
    return value;
}

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m) {
    std::vector<std::uint8_t> out;
    out.reserve(kEmbeddingHeaderBytes + m.data().size() * 4);
    for (char c : kEmbeddingMagic) out.push_back(static_cast<std::uint8_t>(c));
    put_le<std::uint32_t>(out, kEmbeddingVersion);
    put_le<std::uint64_t>(out, m.rows());
    put_le<std::uint64_t>(out, m.cols());
    for (float v : m.data()) {
        if (!std::isfinite(v)) throw ValidationError("embedding matrix contains a non-finite value");
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kEmbeddingHeaderBytes) throw ValidationError("embedding blob truncated: header incomplete");
    for (std::size_t i = 0; i < 4; ++i) {
        if (bytes[i] != static_cast<std::uint8_t>(kEmbeddingMagic[i])) {
            throw ValidationError("embedding blob: bad magic");
        }
    }
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kEmbeddingVersion) {
        throw ValidationError("embedding blob: unsupported version " + std::to_string(version));
    }
    const auto rows = get_le<std::uint64_t>(bytes, 8);
    const auto cols = get_le<std::uint64_t>(bytes, 16);
    const std::uint64_t payload = bytes.size() - kEmbeddingHeaderBytes;
    if (cols != 0 && rows > payload / 4 / cols + 1) {
        throw ValidationError("embedding blob truncated: header promises " + std::to_string(rows) + "x" +
                              std::to_string(cols));
    }
    const std::uint64_t expected = rows * cols * 4;
    if (payload < expected) {
        throw ValidationError("embedding blob truncated: expected " + std::to_string(expected) +
                              " payload bytes, found " + std::to_string(payload));
    }
    if (payload > expected) {
        throw ValidationError("embedding blob size mismatch: " + std::to_string(payload - expected) +
                              " trailing bytes");
    }
    std::vector<float> data(rows * cols);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const float v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, kEmbeddingHeaderBytes + 4 * i));
        if (!std::isfinite(v)) {
            throw ValidationError("embedding blob: non-finite value at row " + std::to_string(i / cols) +
                                  ", col " + std::to_string(i % cols));
        }
        data[i] = v;
    }
    return EmbeddingMatrix(rows, cols, std::move(data));
}

void write_embeddings(const EmbeddingMatrix& m, const fs::path& path) {
    const auto bytes = encode_embeddings(m);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

EmbeddingMatrix read_embeddings(const fs::path& path) {
    const std::string raw = read_text_file(path);
    try {
        return decode_embeddings(
            std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void bind_embeddings(const Manifest& manifest, const EmbeddingMatrix& m, const std::string& what) {
    if (m.rows() != manifest.size()) {
        throw ValidationError(what + ": " + std::to_string(m.rows()) + " rows but manifest has " +
                              std::to_string(manifest.size()) + " samples");
    }
    for (const auto& s : manifest.samples) {
        if (s.row >= m.rows()) throw ValidationError(what + ": row out of range for id " + s.id);
    }
}

// ---------------------------------------------------------------------------
// Predictions

std::vector<ProbTriple> PredictionSet::complete(const std::string& model) const {
    auto it = by_model.find(model);
    if (it == by_model.end()) throw ValidationError("no predictions for model '" + model + "'");
    std::vector<ProbTriple> out;
    out.reserve(it->second.size());
    for (std::size_t i = 0; i < it->second.size(); ++i) {
        if (!it->second[i]) {
            throw ValidationError("model '" + model + "' has no prediction for sample " + std::to_string(i));
        }
        out.push_back(*it->second[i]);
    }
    return out;
}

PredictionSet parse_predictions(std::istream& in, const Manifest& manifest) {
    PredictionSet set;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            throw ValidationError("predictions line " + std::to_string(line_no) + ": malformed JSON");
        }
        try {
            const auto id = require_string(j, "id");
            const auto model = require_string(j, "model");
            const auto idx = manifest.find(id);
            if (!idx) throw ValidationError("unknown id " + id);
            ProbTriple p;
            try {
                p = ProbTriple::from_raw(require_number(j, "p_mild"), require_number(j, "p_moderate"),
                                         require_number(j, "p_severe"));
            } catch (const ValidationError& e) {
                throw ValidationError(std::string(e.what()) + " for id " + id);
            }
            auto& slots = set.by_model[model];
            if (slots.empty()) slots.resize(manifest.size());
            if (slots[*idx]) throw ValidationError("duplicate prediction for id " + id + ", model " + model);
            slots[*idx] = p;
        } catch (const ValidationError& e) {
            throw ValidationError("predictions line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    for (const auto& [model, slots] : set.by_model) {
        auto& miss = set.missing[model];
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (!slots[i]) miss.push_back(manifest.samples[i].id);
        }
    }
    return set;
}

PredictionSet read_predictions(const fs::path& path, const Manifest& manifest) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open predictions " + path.string());
    try {
        return parse_predictions(in, manifest);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void merge_predictions(PredictionSet& a, const PredictionSet& b, const Manifest& manifest) {
    for (const auto& [model, slots] : b.by_model) {
        auto& dst = a.by_model[model];
        if (dst.empty()) dst.resize(slots.size());
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (!slots[i]) continue;
            if (dst[i]) throw ValidationError("duplicate prediction for sample " + std::to_string(i) + ", model " + model);
            dst[i] = slots[i];
        }
        auto& miss = a.missing[model];
        miss.clear();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (!dst[i]) miss.push_back(manifest.samples[i].id);
        }
    }
}

void write_predictions(std::ostream& out, const Manifest& manifest, const std::string& model,
                       std::span<const ProbTriple> probs) {
    if (probs.size() != manifest.size()) throw Error("prediction count does not match manifest");
    for (std::size_t i = 0; i < probs.size(); ++i) {
        Json j;
        j["id"] = manifest.samples[i].id;
        j["model"] = model;
        j["p_mild"] = probs[i][0];
        j["p_moderate"] = probs[i][1];
        j["p_severe"] = probs[i][2];
        out << j.dump() << '\n';
    }
}

void write_predictions(const fs::path& path, const Manifest& manifest, const std::string& model,
                       std::span<const ProbTriple> probs) {
    std::ostringstream os;
    write_predictions(os, manifest, model, probs);
    write_text_file(path, os.str());
}

// ---------------------------------------------------------------------------
// Prompt sets

std::string_view to_string(ProbeDimension d) noexcept {
    switch (d) {
        case ProbeDimension::Trees: return "trees";
        case ProbeDimension::Debris: return "debris";
        case ProbeDimension::Infrastructure: return "infrastructure";
        case ProbeDimension::Flood: return "flood";
    }
    return "unknown";
}

ProbeDimension parse_probe_dimension(std::string_view text) {
    for (auto d : kAllProbeDims) {
        if (to_string(d) == text) return d;
    }
    throw ValidationError("unknown probe dimension '" + std::string(text) + "'");
}

std::string prompt_file_name(ProbeDimension d) { return "prompts_" + std::string(to_string(d)) + ".json"; }

std::string prompt_set_json(const PromptSet& set) {
    Json j;
    j["dimension"] = std::string(to_string(set.dimension));
    j["prompts"] = set.prompts;
    return j.dump(2) + "\n";
}

PromptSet parse_prompt_set(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("prompt set: malformed JSON: ") + e.what());
    }
    PromptSet set;
    set.dimension = parse_probe_dimension(require_string(j, "dimension"));
    auto it = j.find("prompts");
    if (it == j.end() || !it->is_array()) throw ValidationError("prompt set: missing 'prompts' array");
    for (const auto& p : *it) {
        if (!p.is_string()) throw ValidationError("prompt set: prompts must be strings");
        set.prompts.push_back(p.get<std::string>());
    }
    if (set.prompts.empty()) throw ValidationError("prompt set: empty prompt list");
    return set;
}

void write_prompt_set(const PromptSet& set, const fs::path& path) {
    if (set.prompts.empty()) throw ValidationError("prompt set: empty prompt list");
    write_text_file(path, prompt_set_json(set));
}

PromptSet read_prompt_set(const fs::path& path, const std::optional<fs::path>& embeddings) {
    PromptSet set;
    try {
        set = parse_prompt_set(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    if (embeddings) {
        auto m = read_embeddings(*embeddings);
        if (m.rows() != set.prompts.size()) {
            throw ValidationError(embeddings->string() + ": " + std::to_string(m.rows()) + " rows for " +
                                  std::to_string(set.prompts.size()) + " prompts");
        }
        set.embeddings = std::move(m);
    }
    return set;
}

std::array<PromptSet, kNumProbeDims> read_prompt_dir(const fs::path& dir) {
    std::array<PromptSet, kNumProbeDims> out;
    for (auto d : kAllProbeDims) {
        const auto json_path = dir / prompt_file_name(d);
        auto blob = json_path;
        blob.replace_extension(".darb");
        std::optional<fs::path> emb;
        if (fs::exists(blob)) emb = blob;
        out[index_of(d)] = read_prompt_set(json_path, emb);
        if (out[index_of(d)].dimension != d) {
            throw ValidationError(json_path.string() + ": dimension field does not match file name");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Captions

std::vector<std::string> validate_caption_record(const Json& record) {
    if (!record.is_object()) throw ValidationError("caption record is not an object");
    const auto id = require_string(record, "id");
    if (id.empty()) throw ValidationError("caption record with empty id");
    const auto description = require_string(record, "description");
    std::istringstream words(description);
    std::size_t n = 0;
    for (std::string w; words >> w;) ++n;
    std::vector<std::string> warnings;
    if (n == 0) {
        warnings.push_back("empty description");
    } else if (n < 10 || n > 120) {
        warnings.push_back("length " + std::to_string(n) + " outside 10\xE2\x80\x93" "120");
    }
    return warnings;
}

std::vector<CaptionRecord> read_captions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open captions " + path.string());
    std::vector<CaptionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        try {
            const Json j = Json::parse(line);
            CaptionRecord rec;
            rec.warnings = validate_caption_record(j);
            rec.id = j["id"].get<std::string>();
            rec.description = j["description"].get<std::string>();
            out.push_back(std::move(rec));
        } catch (const Json::exception& e) {
            throw ValidationError("captions line " + std::to_string(line_no) + ": malformed JSON");
        } catch (const ValidationError& e) {
            throw ValidationError("captions line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace darb
