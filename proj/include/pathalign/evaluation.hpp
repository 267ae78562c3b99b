#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathalign/encoders.hpp"
#include "pathalign/errors.hpp"
#include "pathalign/io.hpp"
#include "pathalign/rng.hpp"
#include "pathalign/tensor.hpp"

namespace pathalign {

inline constexpr const char* kClassPlaceholder = "CLASSNAME";

// The 21-template prompt bank used by every zero-shot protocol. The same list
// ships as data/prompt_templates.json for external tooling.
inline const std::vector<std::string>& default_templates() {
    static const std::vector<std::string> templates = {
        "CLASSNAME.",
        "a photomicrograph showing CLASSNAME.",
        "a photomicrograph of CLASSNAME.",
        "an image of CLASSNAME.",
        "an image showing CLASSNAME.",
        "an example of CLASSNAME.",
        "CLASSNAME is shown.",
        "this is CLASSNAME.",
        "there is CLASSNAME.",
        "a histopathological image showing CLASSNAME.",
        "a histopathological image of CLASSNAME.",
        "a histopathological photograph of CLASSNAME.",
        "a histopathological photograph showing CLASSNAME.",
        "shows CLASSNAME.",
        "presence of CLASSNAME.",
        "CLASSNAME is present.",
        "an H&E stained image of CLASSNAME.",
        "an H&E stained image showing CLASSNAME.",
        "an H&E image showing CLASSNAME.",
        "an H&E image of CLASSNAME.",
        "CLASSNAME, H&E stain.",
    };
    return templates;
}

struct PromptClass {
    std::string name;
    std::vector<std::string> synonyms;
};

struct PromptBank {
    std::vector<std::string> templates;
    std::vector<PromptClass> classes;
};

namespace detail {

inline std::size_t count_placeholder(const std::string& tmpl) {
    std::size_t count = 0, pos = 0;
    const std::string needle = kClassPlaceholder;
    while ((pos = tmpl.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

}  // namespace detail

inline void validate_prompt_bank(const PromptBank& bank) {
    if (bank.templates.empty()) throw DataError("prompt bank: no templates");
    for (const std::string& t : bank.templates)
        if (detail::count_placeholder(t) != 1)
            throw DataError("prompt bank: template \"" + t + "\" must contain " +
                            kClassPlaceholder + " exactly once");
    if (bank.classes.empty()) throw DataError("prompt bank: no classes");
    for (const PromptClass& c : bank.classes)
        if (c.synonyms.empty())
            throw DataError("prompt bank: class \"" + c.name + "\" has no synonyms");
}

inline std::vector<std::string> load_templates(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError(path + ": malformed JSON (" + e.what() + ")");
    }
    return j.at("templates").get<std::vector<std::string>>();
}

inline std::vector<PromptClass> load_classes(const std::string& path) {
    std::ifstream in = detail::open_for_read(path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError(path + ": malformed JSON (" + e.what() + ")");
    }
    std::vector<PromptClass> out;
    for (const json& c : j.at("classes"))
        out.push_back({c.at("name").get<std::string>(),
                       c.at("synonyms").get<std::vector<std::string>>()});
    return out;
}

inline PromptBank load_prompt_bank(const std::string& templates_path,
                                   const std::string& classes_path) {
    PromptBank bank{load_templates(templates_path), load_classes(classes_path)};
    validate_prompt_bank(bank);
    return bank;
}

inline std::string render_prompt(const std::string& tmpl, const std::string& synonym) {
    std::string out = tmpl;
    const std::size_t pos = out.find(kClassPlaceholder);
    out.replace(pos, std::string(kClassPlaceholder).size(), synonym);
    return out;
}

struct PromptTrial {
    std::size_t trial_index = 0;
    std::vector<std::string> prompts;        // one per class
    std::vector<std::size_t> template_idx;   // chosen template per class
    std::vector<std::size_t> synonym_idx;    // chosen synonym per class
};

// Template and synonym drawn independently and uniformly per class per trial.
// Each trial consumes its own derived stream, so trials can run in parallel
// and still aggregate to the sequential result.
inline std::vector<PromptTrial> generate_prompts(const PromptBank& bank, const Rng& rng,
                                                 std::size_t trials) {
    validate_prompt_bank(bank);
    if (trials < 1) throw std::invalid_argument("generate_prompts: trials must be >= 1");
    std::vector<PromptTrial> out;
    out.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        Rng stream = rng.derive(t);
        PromptTrial trial;
        trial.trial_index = t;
        for (const PromptClass& c : bank.classes) {
            const std::size_t ti = static_cast<std::size_t>(stream.uniform_int(bank.templates.size()));
            const std::size_t si = static_cast<std::size_t>(stream.uniform_int(c.synonyms.size()));
            trial.template_idx.push_back(ti);
            trial.synonym_idx.push_back(si);
            trial.prompts.push_back(render_prompt(bank.templates[ti], c.synonyms[si]));
        }
        out.push_back(std::move(trial));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Argmax of inner products; ties resolve to the lowest class index.
inline std::vector<std::size_t> zero_shot_classify(const Tensor2& image_embs,
                                                   const Tensor2& class_embs) {
    if (class_embs.rows < 2) throw std::invalid_argument("zero_shot_classify: need >= 2 classes");
    if (image_embs.cols != class_embs.cols)
        throw std::invalid_argument("zero_shot_classify: dimension mismatch");
    std::vector<std::size_t> preds(image_embs.rows);
    for (std::size_t i = 0; i < image_embs.rows; ++i) {
        std::size_t best = 0;
        double best_score = dot(image_embs.row(i), class_embs.row(0));
        for (std::size_t c = 1; c < class_embs.rows; ++c) {
            const double sc = dot(image_embs.row(i), class_embs.row(c));
            if (sc > best_score) {
                best_score = sc;
                best = c;
            }
        }
        preds[i] = best;
    }
    return preds;
}

// Per-class F1 weighted by true-label support. F1 of a class is 0 when
// precision + recall is 0.
inline double weighted_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                          std::size_t num_classes) {
    if (preds.size() != labels.size() || labels.empty())
        throw std::invalid_argument("weighted_f1: preds and labels must be equal-length, non-empty");
    std::vector<std::size_t> tp(num_classes), fp(num_classes), fn(num_classes), support(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++support[labels[i]];
        if (preds[i] == labels[i]) ++tp[labels[i]];
        else {
            ++fp[preds[i]];
            ++fn[labels[i]];
        }
    }
    double score = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (support[c] == 0) continue;
        const double denom_p = static_cast<double>(tp[c] + fp[c]);
        const double denom_r = static_cast<double>(tp[c] + fn[c]);
        const double precision = denom_p > 0 ? tp[c] / denom_p : 0.0;
        const double recall = denom_r > 0 ? tp[c] / denom_r : 0.0;
        const double f1 = (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        score += f1 * static_cast<double>(support[c]);
    }
    return score / static_cast<double>(labels.size());
}

// Unweighted mean of per-class recall over classes with support.
inline double balanced_accuracy(std::span<const std::size_t> preds,
                                std::span<const std::size_t> labels, std::size_t num_classes) {
    if (preds.size() != labels.size() || labels.empty())
        throw std::invalid_argument("balanced_accuracy: preds and labels must be equal-length, non-empty");
    std::vector<std::size_t> tp(num_classes), support(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++support[labels[i]];
        if (preds[i] == labels[i]) ++tp[labels[i]];
    }
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (support[c] == 0) continue;
        total += static_cast<double>(tp[c]) / static_cast<double>(support[c]);
        ++present;
    }
    if (present == 0) throw std::invalid_argument("balanced_accuracy: no labeled classes");
    return total / static_cast<double>(present);
}

// Slide prediction: per class, mean of the K largest patch scores; argmax
// over classes, ties to the lowest index. K is clamped to the patch count.
inline std::size_t topk_pool_slide(const Tensor2& patch_scores, std::size_t top_k) {
    if (patch_scores.rows == 0 || patch_scores.cols == 0)
        throw std::invalid_argument("topk_pool_slide: empty score matrix");
    if (top_k < 1) throw std::invalid_argument("topk_pool_slide: K must be >= 1");
    const std::size_t k = std::min(top_k, patch_scores.rows);
    std::size_t best = 0;
    double best_score = 0.0;
    std::vector<double> column(patch_scores.rows);
    for (std::size_t c = 0; c < patch_scores.cols; ++c) {
        for (std::size_t p = 0; p < patch_scores.rows; ++p) column[p] = patch_scores.at(p, c);
        std::partial_sort(column.begin(), column.begin() + k, column.end(), std::greater<>());
        const double pooled = std::accumulate(column.begin(), column.begin() + k, 0.0) /
                              static_cast<double>(k);
        if (c == 0 || pooled > best_score) {
            best_score = pooled;
            best = c;
        }
    }
    return best;
}

// Alternate slide pooling: the K most confident patches (by their own best
// class score) each vote their argmax class; most votes wins, ties to the
// lowest class index.
inline std::size_t topk_vote_slide(const Tensor2& patch_scores, std::size_t top_k) {
    if (patch_scores.rows == 0 || patch_scores.cols == 0)
        throw std::invalid_argument("topk_vote_slide: empty score matrix");
    if (top_k < 1) throw std::invalid_argument("topk_vote_slide: K must be >= 1");
    const std::size_t k = std::min(top_k, patch_scores.rows);

    std::vector<std::size_t> patch_class(patch_scores.rows);
    std::vector<double> confidence(patch_scores.rows);
    for (std::size_t p = 0; p < patch_scores.rows; ++p) {
        std::size_t best = 0;
        double best_score = patch_scores.at(p, 0);
        for (std::size_t c = 1; c < patch_scores.cols; ++c)
            if (patch_scores.at(p, c) > best_score) {
                best_score = patch_scores.at(p, c);
                best = c;
            }
        patch_class[p] = best;
        confidence[p] = best_score;
    }
    std::vector<std::size_t> order(patch_scores.rows);
    for (std::size_t p = 0; p < order.size(); ++p) order[p] = p;
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (confidence[a] != confidence[b]) return confidence[a] > confidence[b];
                          return a < b;
                      });
    std::vector<std::size_t> votes(patch_scores.cols, 0);
    for (std::size_t i = 0; i < k; ++i) ++votes[patch_class[order[i]]];
    std::size_t best = 0;
    for (std::size_t c = 1; c < votes.size(); ++c)
        if (votes[c] > votes[best]) best = c;
    return best;
}

enum class SlidePooling { MeanTopK, MajorityVote };

inline SlidePooling slide_pooling_from_name(const std::string& s) {
    if (s == "mean") return SlidePooling::MeanTopK;
    if (s == "vote") return SlidePooling::MajorityVote;
    throw DataError("unknown pooling mode: " + s + " (expected mean or vote)");
}

// Fraction of queries with at least one positive in the top K gallery items.
// Ranking is by inner product, descending; ties resolve to the lower gallery
// index.
inline double recall_at_k(const Tensor2& query_embs, const Tensor2& gallery_embs,
                          const std::vector<std::vector<std::size_t>>& positives, std::size_t k) {
    if (query_embs.rows != positives.size())
        throw std::invalid_argument("recall_at_k: one positive set per query required");
    if (k < 1) throw std::invalid_argument("recall_at_k: K must be >= 1");
    if (query_embs.cols != gallery_embs.cols)
        throw std::invalid_argument("recall_at_k: dimension mismatch");
    std::size_t hits = 0;
    std::vector<std::size_t> order(gallery_embs.rows);
    std::vector<double> scores(gallery_embs.rows);
    for (std::size_t q = 0; q < query_embs.rows; ++q) {
        if (positives[q].empty())
            throw std::invalid_argument("recall_at_k: query without positives");
        for (std::size_t g = 0; g < gallery_embs.rows; ++g)
            scores[g] = dot(query_embs.row(q), gallery_embs.row(g));
        for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
        const std::size_t cutoff = std::min(k, order.size());
        std::partial_sort(order.begin(), order.begin() + cutoff, order.end(),
                          [&](std::size_t x, std::size_t y) {
                              if (scores[x] != scores[y]) return scores[x] > scores[y];
                              return x < y;
                          });
        const std::set<std::size_t> pos(positives[q].begin(), positives[q].end());
        for (std::size_t r = 0; r < cutoff; ++r)
            if (pos.count(order[r])) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(query_embs.rows);
}

struct Quartiles {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

// Linear interpolation between order statistics at positions (m-1)*q.
inline Quartiles quartile_report(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("quartile_report: no values");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    auto at_quantile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        if (lo + 1 >= sorted.size()) return sorted[lo];
        return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
    };
    return {at_quantile(0.5), at_quantile(0.25), at_quantile(0.75)};
}

struct EvalReport {
    std::string metric;
    std::vector<double> values;  // one per trial
    Quartiles quartiles;
};

inline json report_to_json(const EvalReport& r) {
    return {{"metric", r.metric},
            {"trials", r.values.size()},
            {"values", r.values},
            {"median", r.quartiles.median},
            {"q1", r.quartiles.q1},
            {"q3", r.quartiles.q3}};
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> labels_to_indices(const std::vector<std::string>& labels,
                                                  const std::vector<PromptClass>& classes) {
    std::map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < classes.size(); ++c) index[classes[c].name] = c;
    std::vector<std::size_t> out;
    out.reserve(labels.size());
    for (const std::string& l : labels) {
        auto it = index.find(l);
        if (it == index.end()) throw DataError("label \"" + l + "\" is not in the class file");
        out.push_back(it->second);
    }
    return out;
}

}  // namespace detail

// Zero-shot patch classification: per trial, one rendered prompt per class is
// encoded and every patch is assigned to the nearest class; weighted F1 per
// trial, quartiles across trials.
inline EvalReport run_patch_zeroshot(const PromptBank& bank, const TextEncoderParams& text_params,
                                     const ImageEncoderParams& image_params,
                                     const std::vector<PatchRecord>& patches, std::size_t trials,
                                     std::uint64_t seed) {
    if (patches.empty()) throw DataError("zero-shot eval: no patches");
    const Tokenizer tok{text_params.vocab};
    std::vector<std::string> labels;
    Tensor2 features(patches.size(), patches[0].features.size());
    for (std::size_t i = 0; i < patches.size(); ++i) {
        labels.push_back(patches[i].label);
        std::copy(patches[i].features.begin(), patches[i].features.end(), features.row(i).begin());
    }
    const std::vector<std::size_t> label_idx = detail::labels_to_indices(labels, bank.classes);
    const Tensor2 image_embs = encode_image_batch(image_params, features);

    const std::vector<PromptTrial> prompt_trials = generate_prompts(bank, Rng(seed), trials);
    EvalReport report;
    report.metric = "weighted_f1";
    for (const PromptTrial& trial : prompt_trials) {
        const Tensor2 class_embs = encode_text_batch(text_params, tok, trial.prompts);
        const std::vector<std::size_t> preds = zero_shot_classify(image_embs, class_embs);
        report.values.push_back(weighted_f1(preds, label_idx, bank.classes.size()));
    }
    report.quartiles = quartile_report(report.values);
    return report;
}

// WSI subtyping: patch scores pooled per slide with Top-K, balanced accuracy
// per trial, one report per K.
inline std::vector<EvalReport> run_wsi_zeroshot(const PromptBank& bank,
                                                const TextEncoderParams& text_params,
                                                const ImageEncoderParams& image_params,
                                                const std::vector<WsiRecord>& slides,
                                                const std::vector<std::size_t>& top_k_list,
                                                std::size_t trials, std::uint64_t seed,
                                                SlidePooling pooling = SlidePooling::MeanTopK) {
    if (slides.empty()) throw DataError("wsi eval: no slides");
    if (top_k_list.empty()) throw DataError("wsi eval: empty K list");
    const Tokenizer tok{text_params.vocab};

    std::vector<std::string> labels;
    std::vector<Tensor2> slide_embs;
    for (const WsiRecord& s : slides) {
        labels.push_back(s.label);
        Tensor2 patch_features(s.patch_features.size(), s.patch_features[0].size());
        for (std::size_t p = 0; p < s.patch_features.size(); ++p)
            std::copy(s.patch_features[p].begin(), s.patch_features[p].end(),
                      patch_features.row(p).begin());
        slide_embs.push_back(encode_image_batch(image_params, patch_features));
    }
    const std::vector<std::size_t> label_idx = detail::labels_to_indices(labels, bank.classes);

    const std::vector<PromptTrial> prompt_trials = generate_prompts(bank, Rng(seed), trials);
    const std::string suffix = pooling == SlidePooling::MajorityVote ? "@vote" : "";
    std::vector<EvalReport> reports(top_k_list.size());
    for (std::size_t ki = 0; ki < top_k_list.size(); ++ki)
        reports[ki].metric = "balanced_accuracy@top" + std::to_string(top_k_list[ki]) + suffix;

    for (const PromptTrial& trial : prompt_trials) {
        const Tensor2 class_embs = encode_text_batch(text_params, tok, trial.prompts);
        std::vector<Tensor2> scores;
        scores.reserve(slides.size());
        for (const Tensor2& embs : slide_embs) scores.push_back(matmul_nt(embs, class_embs));
        for (std::size_t ki = 0; ki < top_k_list.size(); ++ki) {
            std::vector<std::size_t> preds;
            preds.reserve(slides.size());
            for (const Tensor2& sc : scores)
                preds.push_back(pooling == SlidePooling::MajorityVote
                                    ? topk_vote_slide(sc, top_k_list[ki])
                                    : topk_pool_slide(sc, top_k_list[ki]));
            reports[ki].values.push_back(balanced_accuracy(preds, label_idx, bank.classes.size()));
        }
    }
    for (EvalReport& r : reports) r.quartiles = quartile_report(r.values);
    return reports;
}

enum class RetrievalTask { ImageToText, TextToImage, LabelToText, ImageToLabel };

inline RetrievalTask retrieval_task_from_name(const std::string& s) {
    if (s == "i2t") return RetrievalTask::ImageToText;
    if (s == "t2i") return RetrievalTask::TextToImage;
    if (s == "l2t") return RetrievalTask::LabelToText;
    if (s == "i2l") return RetrievalTask::ImageToLabel;
    throw DataError("unknown retrieval task: " + s + " (expected i2t, t2i, l2t or i2l)");
}

// Disease-retrieval label prompts are the bare class name with the plain
// template "CLASSNAME.".
inline std::string label_prompt(const std::string& label) { return label + "."; }

// Cross-modal retrieval pairs each image with its own caption; disease
// retrieval treats every item with the query's label as a positive.
inline std::map<std::size_t, double> run_retrieval(const std::vector<PairRecord>& pairs,
                                                   std::size_t d_img,
                                                   const TextEncoderParams& phi_t,
                                                   const ImageEncoderParams& phi_v,
                                                   RetrievalTask task,
                                                   const std::vector<std::size_t>& k_list) {
    if (pairs.empty()) throw DataError("retrieval: no pairs");
    const Tokenizer tok{phi_t.vocab};

    Tensor2 features(pairs.size(), d_img);
    std::vector<std::string> captions(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::copy(pairs[i].image_features.begin(), pairs[i].image_features.end(),
                  features.row(i).begin());
        captions[i] = pairs[i].caption;
    }

    const bool needs_labels =
        task == RetrievalTask::LabelToText || task == RetrievalTask::ImageToLabel;
    std::vector<std::string> label_names;          // first-appearance order
    std::vector<std::size_t> pair_label(pairs.size());
    if (needs_labels) {
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            if (!pairs[i].disease_label)
                throw DataError("retrieval: pair \"" + pairs[i].id +
                                "\" has no disease_label, required by task");
            auto [it, inserted] = index.try_emplace(*pairs[i].disease_label, label_names.size());
            if (inserted) label_names.push_back(*pairs[i].disease_label);
            pair_label[i] = it->second;
        }
    }

    Tensor2 queries, gallery;
    std::vector<std::vector<std::size_t>> positives;
    switch (task) {
        case RetrievalTask::ImageToText: {
            queries = encode_image_batch(phi_v, features);
            gallery = encode_text_batch(phi_t, tok, captions);
            for (std::size_t i = 0; i < pairs.size(); ++i) positives.push_back({i});
            break;
        }
        case RetrievalTask::TextToImage: {
            queries = encode_text_batch(phi_t, tok, captions);
            gallery = encode_image_batch(phi_v, features);
            for (std::size_t i = 0; i < pairs.size(); ++i) positives.push_back({i});
            break;
        }
        case RetrievalTask::LabelToText: {
            std::vector<std::string> prompts;
            prompts.reserve(label_names.size());
            for (const std::string& l : label_names) prompts.push_back(label_prompt(l));
            queries = encode_text_batch(phi_t, tok, prompts);
            gallery = encode_text_batch(phi_t, tok, captions);
            positives.resize(label_names.size());
            for (std::size_t i = 0; i < pairs.size(); ++i) positives[pair_label[i]].push_back(i);
            break;
        }
        case RetrievalTask::ImageToLabel: {
            queries = encode_image_batch(phi_v, features);
            std::vector<std::string> prompts;
            prompts.reserve(label_names.size());
            for (const std::string& l : label_names) prompts.push_back(label_prompt(l));
            gallery = encode_text_batch(phi_t, tok, prompts);
            for (std::size_t i = 0; i < pairs.size(); ++i) positives.push_back({pair_label[i]});
            break;
        }
    }

    std::map<std::size_t, double> out;
    for (std::size_t k : k_list) out[k] = recall_at_k(queries, gallery, positives, k);
    return out;
}

}  // namespace pathalign
