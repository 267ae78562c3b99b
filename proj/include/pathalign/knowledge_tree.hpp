#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pathalign/errors.hpp"
#include "pathalign/records.hpp"
#include "pathalign/rng.hpp"

namespace pathalign {

enum class AttributeKind { Synonym, Definition, Histology, Cytology };

inline constexpr std::array<AttributeKind, 4> kAttributeKinds = {
    AttributeKind::Synonym, AttributeKind::Definition, AttributeKind::Histology,
    AttributeKind::Cytology};

inline const char* attribute_kind_name(AttributeKind k) {
    switch (k) {
        case AttributeKind::Synonym: return "synonym";
        case AttributeKind::Definition: return "definition";
        case AttributeKind::Histology: return "histology";
        case AttributeKind::Cytology: return "cytology";
    }
    return "?";
}

inline AttributeKind attribute_kind_from_name(const std::string& s) {
    for (AttributeKind k : kAttributeKinds)
        if (s == attribute_kind_name(k)) return k;
    throw DataError("unknown attribute kind: " + s);
}

struct Attribute {
    AttributeKind kind;
    std::string text;

    bool operator==(const Attribute&) const = default;
};

// Lowercase, trim, collapse internal whitespace. Duplicate detection key.
inline std::string normalize_attribute_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = true;  // swallows leading whitespace
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

struct DiseaseNode {
    std::size_t id = 0;
    std::string name;
    std::optional<std::string> cui;
    std::string tissue;
    std::vector<Attribute> attributes;

    bool operator==(const DiseaseNode&) const = default;
};

struct BuildLog {
    std::size_t merges = 0;
    std::size_t deleted = 0;
    std::vector<std::string> created_tissues;  // tissues absent from the backbone
    std::vector<std::string> deleted_names;

    bool operator==(const BuildLog&) const = default;
};

// Tissues -> diseases -> typed attributes. Immutable after build.
struct KnowledgeTree {
    std::vector<DiseaseNode> nodes;                        // ids dense 0..N-1
    std::map<std::string, std::vector<std::size_t>> tissues;
    BuildLog build_log;

    bool operator==(const KnowledgeTree&) const = default;
};

struct TreeStats {
    std::map<std::string, std::size_t> attributes_per_kind;
    std::map<std::string, std::size_t> entities_per_kind;
    std::map<std::string, std::size_t> tissues_per_kind;
    std::size_t tissue_count = 0;
    std::size_t disease_count = 0;
    std::size_t attribute_total = 0;
};

namespace detail {

inline void append_unique_attributes(DiseaseNode& node, AttributeKind kind,
                                     const std::vector<std::string>& texts,
                                     std::set<std::pair<int, std::string>>& seen) {
    for (const std::string& t : texts) {
        const auto key = std::make_pair(static_cast<int>(kind), normalize_attribute_text(t));
        if (seen.insert(key).second) node.attributes.push_back({kind, t});
    }
}

}  // namespace detail

// Builds the tree: backbone records become nodes, disease records merge into
// backbone nodes on exact CUI match or attach as new nodes under their
// tissue. Attribute-less nodes are pruned afterwards.
inline std::pair<KnowledgeTree, BuildLog> build_tree(const std::vector<DiseaseRecord>& diseases,
                                                     const std::vector<OncoTreeRecord>& oncotree) {
    struct Pending {
        DiseaseNode node;
        std::set<std::pair<int, std::string>> seen;
    };
    std::vector<Pending> pending;
    std::unordered_map<std::string, std::size_t> by_cui;
    std::set<std::string> backbone_tissues;
    BuildLog log;

    for (const OncoTreeRecord& r : oncotree) {
        backbone_tissues.insert(r.tissue);
        if (by_cui.count(r.cui)) continue;  // first backbone record wins a duplicate CUI
        Pending p;
        p.node.name = r.name;
        p.node.cui = r.cui;
        p.node.tissue = r.tissue;
        by_cui.emplace(r.cui, pending.size());
        pending.push_back(std::move(p));
    }

    std::set<std::string> created;
    for (const DiseaseRecord& r : diseases) {
        Pending* target = nullptr;
        if (r.cui) {
            auto it = by_cui.find(*r.cui);
            if (it != by_cui.end()) {
                target = &pending[it->second];
                ++log.merges;
                // The backbone node keeps its name and tissue; a differing
                // record name joins the synonym list.
                if (normalize_attribute_text(r.name) != normalize_attribute_text(target->node.name))
                    detail::append_unique_attributes(target->node, AttributeKind::Synonym, {r.name},
                                                     target->seen);
            }
        }
        if (!target) {
            if (!backbone_tissues.count(r.tissue) && created.insert(r.tissue).second)
                log.created_tissues.push_back(r.tissue);
            Pending p;
            p.node.name = r.name;
            p.node.cui = r.cui;
            p.node.tissue = r.tissue;
            pending.push_back(std::move(p));
            target = &pending.back();
        }
        detail::append_unique_attributes(target->node, AttributeKind::Synonym, r.synonyms, target->seen);
        detail::append_unique_attributes(target->node, AttributeKind::Definition, r.definitions,
                                         target->seen);
        detail::append_unique_attributes(target->node, AttributeKind::Histology, r.histology,
                                         target->seen);
        detail::append_unique_attributes(target->node, AttributeKind::Cytology, r.cytology,
                                         target->seen);
    }

    KnowledgeTree tree;
    for (Pending& p : pending) {
        if (p.node.attributes.empty()) {
            ++log.deleted;
            log.deleted_names.push_back(p.node.name);
            continue;
        }
        p.node.id = tree.nodes.size();
        tree.tissues[p.node.tissue].push_back(p.node.id);
        tree.nodes.push_back(std::move(p.node));
    }
    tree.build_log = log;
    return {std::move(tree), log};
}

inline TreeStats tree_stats(const KnowledgeTree& tree) {
    TreeStats s;
    std::map<std::string, std::set<std::string>> kind_tissues;
    for (AttributeKind k : kAttributeKinds) {
        s.attributes_per_kind[attribute_kind_name(k)] = 0;
        s.entities_per_kind[attribute_kind_name(k)] = 0;
        s.tissues_per_kind[attribute_kind_name(k)] = 0;
    }
    for (const DiseaseNode& node : tree.nodes) {
        std::set<AttributeKind> kinds_here;
        for (const Attribute& a : node.attributes) {
            ++s.attributes_per_kind[attribute_kind_name(a.kind)];
            kinds_here.insert(a.kind);
            ++s.attribute_total;
        }
        for (AttributeKind k : kinds_here) {
            ++s.entities_per_kind[attribute_kind_name(k)];
            kind_tissues[attribute_kind_name(k)].insert(node.tissue);
        }
    }
    for (auto& [kind, tissues] : kind_tissues) s.tissues_per_kind[kind] = tissues.size();
    s.tissue_count = tree.tissues.size();
    s.disease_count = tree.nodes.size();
    return s;
}

// A metric-learning mini-batch: n distinct entities, k attribute texts each,
// entity-major order.
struct KnowledgeBatch {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<std::size_t> entity_ids;  // n entries, distinct
    std::vector<std::string> texts;       // n*k entries
};

// Entities uniform without replacement; attributes without replacement when a
// node has at least k of them, with replacement otherwise (k is fixed per
// batch but attribute counts vary per disease).
inline KnowledgeBatch sample_entity_batch(const KnowledgeTree& tree, Rng& rng, std::size_t n,
                                          std::size_t k) {
    if (n < 2 || k < 2) throw std::invalid_argument("sample_entity_batch: need n >= 2 and k >= 2");
    if (tree.nodes.size() < n)
        throw DataError("sample_entity_batch: tree has " + std::to_string(tree.nodes.size()) +
                        " nodes, batch needs " + std::to_string(n));
    KnowledgeBatch batch;
    batch.n = n;
    batch.k = k;
    batch.entity_ids = rng.sample_without_replacement(tree.nodes.size(), n);
    batch.texts.reserve(n * k);
    for (std::size_t id : batch.entity_ids) {
        const std::vector<Attribute>& attrs = tree.nodes[id].attributes;
        if (attrs.size() < k) {
            for (std::size_t i = 0; i < k; ++i)
                batch.texts.push_back(attrs[rng.uniform_int(attrs.size())].text);
        } else {
            for (std::size_t idx : rng.sample_without_replacement(attrs.size(), k))
                batch.texts.push_back(attrs[idx].text);
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json tree_to_json(const KnowledgeTree& tree) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const DiseaseNode& n : tree.nodes) {
        nlohmann::json jn;
        jn["id"] = n.id;
        jn["name"] = n.name;
        jn["cui"] = n.cui ? nlohmann::json(*n.cui) : nlohmann::json(nullptr);
        jn["tissue"] = n.tissue;
        jn["attributes"] = nlohmann::json::array();
        for (const Attribute& a : n.attributes)
            jn["attributes"].push_back({{"kind", attribute_kind_name(a.kind)}, {"text", a.text}});
        j["nodes"].push_back(std::move(jn));
    }
    j["tissues"] = tree.tissues;
    j["build_log"] = {{"merges", tree.build_log.merges},
                      {"deleted", tree.build_log.deleted},
                      {"created_tissues", tree.build_log.created_tissues},
                      {"deleted_names", tree.build_log.deleted_names}};
    return j;
}

inline KnowledgeTree tree_from_json(const nlohmann::json& j) {
    KnowledgeTree tree;
    for (const nlohmann::json& jn : j.at("nodes")) {
        DiseaseNode n;
        n.id = jn.at("id").get<std::size_t>();
        if (n.id != tree.nodes.size()) throw DataError("tree file: node ids must be dense 0..N-1");
        n.name = jn.at("name").get<std::string>();
        if (!jn.at("cui").is_null()) n.cui = jn.at("cui").get<std::string>();
        n.tissue = jn.at("tissue").get<std::string>();
        for (const nlohmann::json& ja : jn.at("attributes"))
            n.attributes.push_back(
                {attribute_kind_from_name(ja.at("kind").get<std::string>()),
                 ja.at("text").get<std::string>()});
        if (n.attributes.empty()) throw DataError("tree file: node \"" + n.name + "\" has no attributes");
        tree.nodes.push_back(std::move(n));
    }
    tree.tissues = j.at("tissues").get<std::map<std::string, std::vector<std::size_t>>>();
    const nlohmann::json& log = j.at("build_log");
    tree.build_log.merges = log.at("merges").get<std::size_t>();
    tree.build_log.deleted = log.at("deleted").get<std::size_t>();
    tree.build_log.created_tissues = log.at("created_tissues").get<std::vector<std::string>>();
    tree.build_log.deleted_names = log.at("deleted_names").get<std::vector<std::string>>();
    return tree;
}

inline nlohmann::json stats_to_json(const TreeStats& s) {
    return {{"attributes_per_kind", s.attributes_per_kind},
            {"entities_per_kind", s.entities_per_kind},
            {"tissues_per_kind", s.tissues_per_kind},
            {"tissue_count", s.tissue_count},
            {"disease_count", s.disease_count},
            {"attribute_total", s.attribute_total}};
}

// Inverse view used by the rebuild-idempotence check and the synthetic
// generators: every node becomes a plain disease record.
inline std::vector<DiseaseRecord> to_disease_records(const KnowledgeTree& tree) {
    std::vector<DiseaseRecord> out;
    out.reserve(tree.nodes.size());
    for (const DiseaseNode& n : tree.nodes) {
        DiseaseRecord r;
        r.name = n.name;
        r.cui = n.cui;
        r.tissue = n.tissue;
        r.source = "tree";
        for (const Attribute& a : n.attributes) {
            switch (a.kind) {
                case AttributeKind::Synonym: r.synonyms.push_back(a.text); break;
                case AttributeKind::Definition: r.definitions.push_back(a.text); break;
                case AttributeKind::Histology: r.histology.push_back(a.text); break;
                case AttributeKind::Cytology: r.cytology.push_back(a.text); break;
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline void save_tree(const KnowledgeTree& tree, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << tree_to_json(tree).dump(2) << '\n';
}

inline KnowledgeTree load_tree(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path + ": malformed JSON (" + e.what() + ")");
    }
    return tree_from_json(j);
}

}  // namespace pathalign
