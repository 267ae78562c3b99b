#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathalign/errors.hpp"
#include "pathalign/records.hpp"
#include "pathalign/tensor.hpp"

namespace pathalign {

using json = nlohmann::json;

namespace detail {

inline std::string where(const std::string& path, std::size_t line) {
    return path + " line " + std::to_string(line);
}

inline json parse_line(const std::string& text, const std::string& path, std::size_t line) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(where(path, line) + ": malformed JSON (" + e.what() + ")");
    }
}

inline const json& require_field(const json& j, const char* field, const std::string& path,
                                 std::size_t line) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null())
        throw DataError(where(path, line) + ": missing required field \"" + field + "\"");
    return *it;
}

inline std::string require_string(const json& j, const char* field, const std::string& path,
                                  std::size_t line) {
    const json& f = require_field(j, field, path, line);
    if (!f.is_string())
        throw DataError(where(path, line) + ": field \"" + field + "\" must be a string");
    return f.get<std::string>();
}

inline std::vector<std::string> optional_string_list(const json& j, const char* field,
                                                     const std::string& path, std::size_t line) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_array())
        throw DataError(where(path, line) + ": field \"" + field + "\" must be an array");
    std::vector<std::string> out;
    for (const json& v : *it) {
        if (!v.is_string())
            throw DataError(where(path, line) + ": field \"" + field + "\" must hold strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

inline std::vector<double> require_vector(const json& j, const char* field, const std::string& path,
                                          std::size_t line) {
    const json& f = require_field(j, field, path, line);
    if (!f.is_array())
        throw DataError(where(path, line) + ": field \"" + field + "\" must be an array");
    std::vector<double> out;
    out.reserve(f.size());
    for (const json& v : f) {
        if (!v.is_number())
            throw DataError(where(path, line) + ": field \"" + field + "\" must hold numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

// Attribute texts are trimmed at load; an explicitly listed empty text is a
// data error, but a record whose lists are all empty is legal (pruning is the
// tree builder's job).
inline std::vector<std::string> attribute_list(const json& j, const char* field,
                                               const std::string& path, std::size_t line) {
    std::vector<std::string> raw = optional_string_list(j, field, path, line);
    std::vector<std::string> out;
    out.reserve(raw.size());
    for (const std::string& s : raw) {
        std::string t = trim_copy(s);
        if (t.empty())
            throw DataError(where(path, line) + ": field \"" + field + "\" has an empty attribute text");
        out.push_back(std::move(t));
    }
    return out;
}

inline std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    return in;
}

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON Lines loaders / writers
// ---------------------------------------------------------------------------

inline std::vector<DiseaseRecord> load_disease_records(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    std::vector<DiseaseRecord> out;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (trim_copy(text).empty()) continue;
        const json j = detail::parse_line(text, path, line);
        DiseaseRecord r;
        r.name = trim_copy(detail::require_string(j, "name", path, line));
        if (r.name.empty()) throw DataError(detail::where(path, line) + ": field \"name\" is empty");
        r.synonyms = detail::attribute_list(j, "synonyms", path, line);
        r.definitions = detail::attribute_list(j, "definitions", path, line);
        r.histology = detail::attribute_list(j, "histology", path, line);
        r.cytology = detail::attribute_list(j, "cytology", path, line);
        r.tissue = trim_copy(detail::require_string(j, "tissue", path, line));
        if (r.tissue.empty()) throw DataError(detail::where(path, line) + ": field \"tissue\" is empty");
        if (j.contains("cui") && !j["cui"].is_null()) {
            if (!j["cui"].is_string())
                throw DataError(detail::where(path, line) + ": field \"cui\" must be a string");
            r.cui = j["cui"].get<std::string>();
        }
        r.source = j.value("source", std::string{});
        out.push_back(std::move(r));
    }
    return out;
}

inline void save_disease_records(const std::vector<DiseaseRecord>& records, const std::string& path) {
    std::ofstream out = detail::open_for_write(path);
    for (const DiseaseRecord& r : records) {
        json j;
        j["name"] = r.name;
        j["synonyms"] = r.synonyms;
        j["definitions"] = r.definitions;
        j["histology"] = r.histology;
        j["cytology"] = r.cytology;
        j["tissue"] = r.tissue;
        if (r.cui) j["cui"] = *r.cui;
        j["source"] = r.source;
        out << j.dump() << '\n';
    }
}

inline std::vector<OncoTreeRecord> load_oncotree_records(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    std::vector<OncoTreeRecord> out;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (trim_copy(text).empty()) continue;
        const json j = detail::parse_line(text, path, line);
        OncoTreeRecord r;
        r.name = trim_copy(detail::require_string(j, "name", path, line));
        r.cui = trim_copy(detail::require_string(j, "cui", path, line));
        if (r.cui.empty()) throw DataError(detail::where(path, line) + ": field \"cui\" is empty");
        r.tissue = trim_copy(detail::require_string(j, "tissue", path, line));
        if (j.contains("parent") && !j["parent"].is_null())
            r.parent = j["parent"].get<std::string>();
        if (j.contains("level") && !j["level"].is_null()) {
            if (!j["level"].is_number_unsigned())
                throw DataError(detail::where(path, line) + ": field \"level\" must be a non-negative integer");
            r.level = j["level"].get<std::size_t>();
        }
        out.push_back(std::move(r));
    }
    // Parents must name records in the same file.
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!out[i].parent) continue;
        bool found = false;
        for (const OncoTreeRecord& other : out)
            if (other.name == *out[i].parent) { found = true; break; }
        if (!found)
            throw DataError(path + ": record \"" + out[i].name + "\" references unknown parent \"" +
                            *out[i].parent + "\"");
    }
    return out;
}

inline void save_oncotree_records(const std::vector<OncoTreeRecord>& records, const std::string& path) {
    std::ofstream out = detail::open_for_write(path);
    for (const OncoTreeRecord& r : records) {
        json j;
        j["name"] = r.name;
        j["cui"] = r.cui;
        j["tissue"] = r.tissue;
        if (r.parent) j["parent"] = *r.parent;
        j["level"] = r.level;
        out << j.dump() << '\n';
    }
}

namespace detail {

// Dimensioned JSON Lines files open with {"dim": D}; every feature vector in
// the body must have exactly D entries.
inline std::size_t read_dim_header(std::ifstream& in, const std::string& path, std::size_t& line) {
    std::string text;
    while (std::getline(in, text)) {
        ++line;
        if (!trim_copy(text).empty()) break;
        text.clear();
    }
    if (trim_copy(text).empty()) throw DataError(path + ": missing {\"dim\": D} header line");
    const json j = parse_line(text, path, line);
    const json& d = require_field(j, "dim", path, line);
    if (!d.is_number_unsigned() || d.get<std::size_t>() == 0)
        throw DataError(where(path, line) + ": \"dim\" must be a positive integer");
    return d.get<std::size_t>();
}

}  // namespace detail

inline std::pair<std::size_t, std::vector<PairRecord>> load_pair_records(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    std::size_t line = 0;
    const std::size_t dim = detail::read_dim_header(in, path, line);
    std::vector<PairRecord> out;
    std::string text;
    while (std::getline(in, text)) {
        ++line;
        if (trim_copy(text).empty()) continue;
        const json j = detail::parse_line(text, path, line);
        PairRecord r;
        r.id = detail::require_string(j, "id", path, line);
        r.image_features = detail::require_vector(j, "image_features", path, line);
        if (r.image_features.size() != dim)
            throw DataError(path + ": record \"" + r.id + "\": image_features has " +
                            std::to_string(r.image_features.size()) + " entries, header declares " +
                            std::to_string(dim));
        r.caption = detail::require_string(j, "caption", path, line);
        if (trim_copy(r.caption).empty())
            throw DataError(detail::where(path, line) + ": field \"caption\" is empty");
        if (j.contains("disease_label") && !j["disease_label"].is_null())
            r.disease_label = j["disease_label"].get<std::string>();
        out.push_back(std::move(r));
    }
    return {dim, std::move(out)};
}

inline void save_pair_records(std::size_t dim, const std::vector<PairRecord>& records,
                              const std::string& path) {
    std::ofstream out = detail::open_for_write(path);
    out << json{{"dim", dim}}.dump() << '\n';
    for (const PairRecord& r : records) {
        json j;
        j["id"] = r.id;
        j["image_features"] = r.image_features;
        j["caption"] = r.caption;
        if (r.disease_label) j["disease_label"] = *r.disease_label;
        out << j.dump() << '\n';
    }
}

inline std::pair<std::size_t, std::vector<PatchRecord>> load_patch_records(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    std::size_t line = 0;
    const std::size_t dim = detail::read_dim_header(in, path, line);
    std::vector<PatchRecord> out;
    std::string text;
    while (std::getline(in, text)) {
        ++line;
        if (trim_copy(text).empty()) continue;
        const json j = detail::parse_line(text, path, line);
        PatchRecord r;
        r.id = detail::require_string(j, "id", path, line);
        r.features = detail::require_vector(j, "features", path, line);
        if (r.features.size() != dim)
            throw DataError(path + ": record \"" + r.id + "\": features has " +
                            std::to_string(r.features.size()) + " entries, header declares " +
                            std::to_string(dim));
        r.label = detail::require_string(j, "label", path, line);
        out.push_back(std::move(r));
    }
    return {dim, std::move(out)};
}

inline void save_patch_records(std::size_t dim, const std::vector<PatchRecord>& records,
                               const std::string& path) {
    std::ofstream out = detail::open_for_write(path);
    out << json{{"dim", dim}}.dump() << '\n';
    for (const PatchRecord& r : records) {
        json j;
        j["id"] = r.id;
        j["features"] = r.features;
        j["label"] = r.label;
        out << j.dump() << '\n';
    }
}

inline std::pair<std::size_t, std::vector<WsiRecord>> load_wsi_records(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    std::size_t line = 0;
    const std::size_t dim = detail::read_dim_header(in, path, line);
    std::vector<WsiRecord> out;
    std::string text;
    while (std::getline(in, text)) {
        ++line;
        if (trim_copy(text).empty()) continue;
        const json j = detail::parse_line(text, path, line);
        WsiRecord r;
        r.slide_id = detail::require_string(j, "slide_id", path, line);
        r.label = detail::require_string(j, "label", path, line);
        const json& feats = detail::require_field(j, "patch_features", path, line);
        if (!feats.is_array() || feats.empty())
            throw DataError(path + ": slide \"" + r.slide_id + "\" must have at least one patch");
        for (const json& p : feats) {
            if (!p.is_array())
                throw DataError(detail::where(path, line) + ": patch_features entries must be arrays");
            std::vector<double> v;
            v.reserve(p.size());
            for (const json& x : p) v.push_back(x.get<double>());
            if (v.size() != dim)
                throw DataError(path + ": slide \"" + r.slide_id + "\": a patch has " +
                                std::to_string(v.size()) + " entries, header declares " +
                                std::to_string(dim));
            r.patch_features.push_back(std::move(v));
        }
        out.push_back(std::move(r));
    }
    return {dim, std::move(out)};
}

inline void save_wsi_records(std::size_t dim, const std::vector<WsiRecord>& records,
                             const std::string& path) {
    std::ofstream out = detail::open_for_write(path);
    out << json{{"dim", dim}}.dump() << '\n';
    for (const WsiRecord& r : records) {
        json j;
        j["slide_id"] = r.slide_id;
        j["label"] = r.label;
        j["patch_features"] = r.patch_features;
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: one UTF-8 JSON header line, then raw little-endian float32
// payload in header-declared array order.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor2 tensor;
};

struct Checkpoint {
    std::vector<NamedTensor> arrays;
    json meta;
};

inline void save_checkpoint(const std::vector<NamedTensor>& arrays, const json& meta,
                            const std::string& path) {
    json header;
    header["format_version"] = kCheckpointVersion;
    header["meta"] = meta;
    json decl = json::array();
    for (const NamedTensor& a : arrays)
        decl.push_back({{"name", a.name}, {"rows", a.tensor.rows}, {"cols", a.tensor.cols}});
    header["arrays"] = decl;

    std::ofstream out = detail::open_for_write(path);
    out << header.dump() << '\n';
    for (const NamedTensor& a : arrays) {
        for (double v : a.tensor.values) {
            const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                                   static_cast<char>((u >> 16) & 0xff),
                                   static_cast<char>((u >> 24) & 0xff)};
            out.write(bytes, 4);
        }
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    std::string header_text;
    if (!std::getline(in, header_text)) throw DataError(path + ": missing checkpoint header");
    const json header = detail::parse_line(header_text, path, 1);
    const json& ver = detail::require_field(header, "format_version", path, 1);
    if (!ver.is_number_integer() || ver.get<int>() != kCheckpointVersion)
        throw DataError(path + ": version mismatch: file has " + ver.dump() + ", reader expects " +
                        std::to_string(kCheckpointVersion));
    const json& decl = detail::require_field(header, "arrays", path, 1);

    Checkpoint ckpt;
    ckpt.meta = header.value("meta", json::object());
    for (const json& a : decl) {
        NamedTensor nt;
        nt.name = a.at("name").get<std::string>();
        const std::size_t rows = a.at("rows").get<std::size_t>();
        const std::size_t cols = a.at("cols").get<std::size_t>();
        nt.tensor = Tensor2(rows, cols);
        for (double& v : nt.tensor.values) {
            char bytes[4];
            if (!in.read(bytes, 4))
                throw DataError(path + ": truncated payload in array \"" + nt.name + "\"");
            const std::uint32_t u = (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[0]))) |
                                    (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[1])) << 8) |
                                    (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[2])) << 16) |
                                    (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[3])) << 24);
            v = static_cast<double>(std::bit_cast<float>(u));
        }
        ckpt.arrays.push_back(std::move(nt));
    }
    char extra;
    if (in.read(&extra, 1)) throw DataError(path + ": payload longer than header declares");
    return ckpt;
}

}  // namespace pathalign
