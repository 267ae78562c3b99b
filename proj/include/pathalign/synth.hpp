#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathalign/errors.hpp"
#include "pathalign/evaluation.hpp"
#include "pathalign/knowledge_tree.hpp"
#include "pathalign/records.hpp"
#include "pathalign/rng.hpp"

namespace pathalign {

// Deterministic desk-scale dataset shapes: a synthetic knowledge tree whose
// attribute sentences share a per-entity core token, image features clustered
// around per-entity latent vectors, and patch/WSI evaluation sets.
struct SynthSpec {
    std::size_t entities = 60;
    std::size_t tissues = 4;
    std::size_t attrs_min = 4;
    std::size_t attrs_max = 8;
    std::size_t latent_dim = 32;
    std::string caption_style = "mixed";  // "plain" keeps bare attribute sentences
    double noise = 0.0;                   // sigma: token noise rate / feature noise scale
    std::uint64_t seed = 0;
    std::size_t pairs = 512;
    std::size_t patches_per_class = 4;
    std::size_t wsi_per_class = 2;
    std::size_t wsi_patches = 12;
    double wsi_true_fraction = 0.3;

    void validate() const {
        if (entities < 2) throw DataError("synth spec: entities must be >= 2");
        if (tissues < 1) throw DataError("synth spec: tissues must be >= 1");
        if (attrs_min < 1 || attrs_max < attrs_min) throw DataError("synth spec: bad attrs range");
        if (latent_dim < 2) throw DataError("synth spec: latent_dim must be >= 2");
        if (noise < 0.0) throw DataError("synth spec: noise must be >= 0");
        if (wsi_true_fraction <= 0.0 || wsi_true_fraction > 0.5)
            throw DataError("synth spec: wsi_true_fraction must be in (0, 0.5]");
        if (caption_style != "mixed" && caption_style != "plain")
            throw DataError("synth spec: caption_style must be \"mixed\" or \"plain\"");
    }
};

inline SynthSpec synth_spec_from_json(const json& j) {
    SynthSpec s;
    if (j.contains("entities")) s.entities = j["entities"].get<std::size_t>();
    if (j.contains("tissues")) s.tissues = j["tissues"].get<std::size_t>();
    if (j.contains("attrs_min")) s.attrs_min = j["attrs_min"].get<std::size_t>();
    if (j.contains("attrs_max")) s.attrs_max = j["attrs_max"].get<std::size_t>();
    if (j.contains("latent_dim")) s.latent_dim = j["latent_dim"].get<std::size_t>();
    if (j.contains("caption_style")) s.caption_style = j["caption_style"].get<std::string>();
    if (j.contains("noise")) s.noise = j["noise"].get<double>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("pairs")) s.pairs = j["pairs"].get<std::size_t>();
    if (j.contains("patches_per_class")) s.patches_per_class = j["patches_per_class"].get<std::size_t>();
    if (j.contains("wsi_per_class")) s.wsi_per_class = j["wsi_per_class"].get<std::size_t>();
    if (j.contains("wsi_patches")) s.wsi_patches = j["wsi_patches"].get<std::size_t>();
    if (j.contains("wsi_true_fraction")) s.wsi_true_fraction = j["wsi_true_fraction"].get<double>();
    s.validate();
    return s;
}

namespace synth_detail {

// Stream ids keep every record independently derivable.
inline constexpr std::uint64_t kTreeStream = 1ULL << 20;
inline constexpr std::uint64_t kPairStream = 2ULL << 20;
inline constexpr std::uint64_t kPatchStream = 3ULL << 20;
inline constexpr std::uint64_t kWsiStream = 4ULL << 20;
inline constexpr std::uint64_t kLatentStream = 5ULL << 20;
inline constexpr std::uint64_t kBackgroundStream = 6ULL << 20;

inline std::string core_token(std::size_t entity) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ent%03zu", entity);
    return buf;
}

inline std::string tissue_name(std::size_t t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "tissue%02zu", t);
    return buf;
}

inline const std::array<const char*, 4>& kind_fillers(AttributeKind kind) {
    static const std::array<const char*, 4> syn = {"lesion", "neoplasm", "growth", "mass"};
    static const std::array<const char*, 4> def = {"diffuse", "focal", "chronic", "acute"};
    static const std::array<const char*, 4> his = {"nested", "papillary", "solid", "trabecular"};
    static const std::array<const char*, 4> cyt = {"clear", "granular", "spindled", "vacuolated"};
    switch (kind) {
        case AttributeKind::Synonym: return syn;
        case AttributeKind::Definition: return def;
        case AttributeKind::Histology: return his;
        case AttributeKind::Cytology: return cyt;
    }
    return syn;
}

inline std::string attribute_sentence(AttributeKind kind, const std::string& core,
                                      const std::string& filler, std::size_t ordinal) {
    const std::string j = std::to_string(ordinal);
    switch (kind) {
        case AttributeKind::Synonym: return core + " " + filler + " type " + j;
        case AttributeKind::Definition:
            return "a condition defined by marker " + core + " showing " + filler + " spread grade " + j;
        case AttributeKind::Histology:
            return "histology shows " + core + " cells arranged in " + filler + " pattern " + j;
        case AttributeKind::Cytology:
            return "cytology reveals " + core + " cells with " + filler + " cytoplasm feature " + j;
    }
    return core;
}

// At rate sigma, a noise token is inserted after each word.
inline std::string add_token_noise(const std::string& sentence, double sigma, Rng& rng) {
    if (sigma <= 0.0) return sentence;
    std::string out;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        if (!out.empty()) out.push_back(' ');
        out += word;
        if (rng.uniform() < sigma) out += " nz" + std::to_string(rng.uniform_int(64));
        word.clear();
    };
    for (char c : sentence) {
        if (c == ' ') flush();
        else word.push_back(c);
    }
    flush();
    return out;
}

}  // namespace synth_detail

// Unit latent direction of one entity; evaluation oracles in tests key on it.
inline std::vector<double> synth_latent(const SynthSpec& spec, std::size_t entity) {
    Rng rng = Rng(spec.seed).derive(synth_detail::kLatentStream + entity);
    std::vector<double> v(spec.latent_dim);
    for (double& x : v) x = rng.gauss();
    return l2_normalize(v);
}

inline std::vector<double> synth_background(const SynthSpec& spec) {
    Rng rng = Rng(spec.seed).derive(synth_detail::kBackgroundStream);
    std::vector<double> v(spec.latent_dim);
    for (double& x : v) x = rng.gauss();
    return l2_normalize(v);
}

// Each entity gets a unique core token woven into every attribute sentence,
// plus kind-specific filler tokens shared across entities.
inline std::vector<DiseaseRecord> gen_knowledge_tree(const SynthSpec& spec) {
    spec.validate();
    std::vector<DiseaseRecord> out;
    out.reserve(spec.entities);
    const Rng root(spec.seed);
    for (std::size_t e = 0; e < spec.entities; ++e) {
        Rng rng = root.derive(synth_detail::kTreeStream + e);
        DiseaseRecord r;
        r.name = synth_detail::core_token(e);
        r.tissue = synth_detail::tissue_name(e % spec.tissues);
        r.source = "synth";
        const std::size_t count =
            spec.attrs_min + rng.uniform_int(spec.attrs_max - spec.attrs_min + 1);
        std::array<std::size_t, 4> per_kind_ordinal = {0, 0, 0, 0};
        for (std::size_t a = 0; a < count; ++a) {
            const AttributeKind kind = kAttributeKinds[a % kAttributeKinds.size()];
            const auto& fillers = synth_detail::kind_fillers(kind);
            const std::string filler = fillers[rng.uniform_int(fillers.size())];
            const std::size_t ordinal = per_kind_ordinal[a % kAttributeKinds.size()]++;
            std::string text = synth_detail::attribute_sentence(kind, r.name, filler, ordinal);
            text = synth_detail::add_token_noise(text, spec.noise, rng);
            switch (kind) {
                case AttributeKind::Synonym: r.synonyms.push_back(text); break;
                case AttributeKind::Definition: r.definitions.push_back(text); break;
                case AttributeKind::Histology: r.histology.push_back(text); break;
                case AttributeKind::Cytology: r.cytology.push_back(text); break;
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

// Image features cluster around the entity latent; captions are reworded
// attribute sentences of that entity, mixing granularities from bare synonym
// to full histology sentence.
inline std::vector<PairRecord> gen_pairs(const SynthSpec& spec, const KnowledgeTree& tree) {
    spec.validate();
    if (tree.nodes.empty()) throw DataError("gen_pairs: empty tree");
    static const std::array<const char*, 4> prefixes = {"", "image showing ", "case of ",
                                                        "micrograph of "};
    std::vector<PairRecord> out;
    out.reserve(spec.pairs);
    const Rng root(spec.seed);
    for (std::size_t i = 0; i < spec.pairs; ++i) {
        Rng rng = root.derive(synth_detail::kPairStream + i);
        const std::size_t e = rng.uniform_int(tree.nodes.size());
        const DiseaseNode& node = tree.nodes[e];
        const Attribute& attr = node.attributes[rng.uniform_int(node.attributes.size())];

        PairRecord r;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "pair%05zu", i);
        r.id = buf;
        if (spec.caption_style == "mixed")
            r.caption = std::string(prefixes[rng.uniform_int(prefixes.size())]) + attr.text;
        else
            r.caption = attr.text;
        const std::vector<double> latent = synth_latent(spec, e);
        r.image_features.resize(spec.latent_dim);
        for (std::size_t d = 0; d < spec.latent_dim; ++d)
            r.image_features[d] = latent[d] + spec.noise * rng.gauss();
        r.disease_label = node.name;
        out.push_back(std::move(r));
    }
    return out;
}

struct SynthEvalSets {
    std::vector<PatchRecord> patches;
    std::vector<WsiRecord> slides;
};

// Patches are class-balanced feature clusters. Slides carry the true-class
// latent only in a minority of patches; the rest lean toward a confuser class
// through a shared background direction, which separates Top-K pooling from
// plain mean pooling.
inline SynthEvalSets gen_eval_sets(const SynthSpec& spec, const KnowledgeTree& tree) {
    spec.validate();
    if (tree.nodes.empty()) throw DataError("gen_eval_sets: empty tree");
    SynthEvalSets out;
    const Rng root(spec.seed);
    const std::vector<double> bg = synth_background(spec);

    std::size_t patch_serial = 0;
    for (std::size_t e = 0; e < tree.nodes.size(); ++e) {
        const std::vector<double> latent = synth_latent(spec, e);
        for (std::size_t p = 0; p < spec.patches_per_class; ++p, ++patch_serial) {
            Rng rng = root.derive(synth_detail::kPatchStream + patch_serial);
            PatchRecord r;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "patch%05zu", patch_serial);
            r.id = buf;
            r.label = tree.nodes[e].name;
            r.features.resize(spec.latent_dim);
            for (std::size_t d = 0; d < spec.latent_dim; ++d)
                r.features[d] = latent[d] + spec.noise * rng.gauss();
            out.patches.push_back(std::move(r));
        }
    }

    std::size_t slide_serial = 0;
    for (std::size_t e = 0; e < tree.nodes.size(); ++e) {
        const std::vector<double> latent = synth_latent(spec, e);
        const std::size_t confuser = (e + 1) % tree.nodes.size();
        const std::vector<double> confuser_latent = synth_latent(spec, confuser);
        for (std::size_t s = 0; s < spec.wsi_per_class; ++s, ++slide_serial) {
            Rng rng = root.derive(synth_detail::kWsiStream + slide_serial);
            WsiRecord r;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "wsi%04zu", slide_serial);
            r.slide_id = buf;
            r.label = tree.nodes[e].name;
            const std::size_t true_count = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(spec.wsi_true_fraction *
                                                         static_cast<double>(spec.wsi_patches))));
            for (std::size_t p = 0; p < spec.wsi_patches; ++p) {
                std::vector<double> f(spec.latent_dim);
                if (p < true_count) {
                    for (std::size_t d = 0; d < spec.latent_dim; ++d)
                        f[d] = latent[d] + spec.noise * rng.gauss();
                } else {
                    for (std::size_t d = 0; d < spec.latent_dim; ++d)
                        f[d] = 0.5 * confuser_latent[d] + bg[d] + spec.noise * rng.gauss();
                }
                r.patch_features.push_back(std::move(f));
            }
            out.slides.push_back(std::move(r));
        }
    }
    return out;
}

// Class file entries: node name plus its synonym attributes.
inline std::vector<PromptClass> gen_classes(const KnowledgeTree& tree) {
    std::vector<PromptClass> out;
    out.reserve(tree.nodes.size());
    for (const DiseaseNode& n : tree.nodes) {
        PromptClass c;
        c.name = n.name;
        c.synonyms.push_back(n.name);
        for (const Attribute& a : n.attributes)
            if (a.kind == AttributeKind::Synonym) c.synonyms.push_back(a.text);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace pathalign
