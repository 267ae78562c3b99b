#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pathalign/encoders.hpp"
#include "pathalign/errors.hpp"
#include "pathalign/evaluation.hpp"
#include "pathalign/gradsuite.hpp"
#include "pathalign/io.hpp"
#include "pathalign/knowledge_tree.hpp"
#include "pathalign/objectives.hpp"
#include "pathalign/rng.hpp"
#include "pathalign/synth.hpp"
#include "pathalign/training.hpp"

namespace pathalign::cli {

namespace detail {

inline std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim_copy(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw DataError("cannot parse list entry \"" + item + "\" as integer");
        }
    }
    if (out.empty()) throw DataError("empty K list");
    return out;
}

inline std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim_copy(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw DataError("cannot parse list entry \"" + item + "\" as number");
        }
    }
    if (out.empty()) throw DataError("empty value list");
    return out;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::parse_error& e) {
        throw DataError(path + ": malformed JSON (" + e.what() + ")");
    }
}

inline void emit_report(const json& report, std::ostream& out,
                        const std::optional<std::string>& out_path) {
    const std::string text = report.dump(2);
    out << text << '\n';
    if (out_path) {
        std::ofstream f(*out_path, std::ios::binary);
        if (!f) throw DataError("cannot open file for writing: " + *out_path);
        f << text << '\n';
    }
}

inline void announce(std::ostream& err, const std::string& command, std::uint64_t seed,
                     const json& config) {
    err << json{{"command", command}, {"seed", seed}, {"config", config}}.dump() << '\n';
}

struct ConfigFlags {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> steps_per_epoch;
    std::optional<std::size_t> n;
    std::optional<std::size_t> k;
    std::optional<std::size_t> pair_batch;
    std::optional<double> lr;
    std::optional<double> momentum;
    std::optional<double> tau;
    std::optional<double> alpha;
    std::optional<double> margin;
    std::optional<std::string> metric;
    bool no_head = false;
    bool no_distill = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "run seed (overrides config)");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--steps-per-epoch", steps_per_epoch, "batches per epoch (0 = one pass)");
        cmd->add_option("--n", n, "entities per batch");
        cmd->add_option("--k", k, "instances per entity");
        cmd->add_option("--pair-batch", pair_batch, "pair batch size");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--momentum", momentum, "SGD momentum");
        cmd->add_option("--tau", tau, "temperature");
        cmd->add_option("--alpha", alpha, "distillation weight");
        cmd->add_option("--margin", margin, "triplet margin");
        cmd->add_option("--metric", metric, "metric loss: adasp or triplet");
        cmd->add_flag("--no-head", no_head, "disable the visual projection head");
        cmd->add_flag("--no-distill", no_distill, "disable the frozen knowledge branch");
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (config_path) apply_config_json(cfg, load_json_file(*config_path));
        if (seed) cfg.seed = *seed;
        if (epochs) cfg.epochs = *epochs;
        if (steps_per_epoch) cfg.steps_per_epoch = *steps_per_epoch;
        if (n) cfg.entities_per_batch = *n;
        if (k) cfg.instances_per_entity = *k;
        if (pair_batch) cfg.pair_batch = *pair_batch;
        if (lr) cfg.lr = *lr;
        if (momentum) cfg.momentum = *momentum;
        if (tau) cfg.tau = *tau;
        if (alpha) cfg.alpha = *alpha;
        if (margin) cfg.margin = *margin;
        if (metric) cfg.metric = metric_loss_from_name(*metric);
        if (no_head) cfg.projection_head = false;
        if (no_distill) cfg.distillation = false;
        cfg.validate();
        return cfg;
    }
};

struct ModelSet {
    TextEncoderParams phi_t;
    ImageEncoderParams phi_v;
};

inline TextEncoderParams load_text_checkpoint(const std::string& path) {
    return text_encoder_from_checkpoint(load_checkpoint(path), path);
}

inline ModelSet load_models(const std::string& dir, const std::string& text_encoder) {
    namespace fs = std::filesystem;
    const std::string text_file = text_encoder == "k" ? "phi_k.ckpt" : "phi_t.ckpt";
    ModelSet m;
    m.phi_t = load_text_checkpoint((fs::path(dir) / text_file).string());
    const std::string v_path = (fs::path(dir) / "phi_v.ckpt").string();
    m.phi_v = image_encoder_from_checkpoint(load_checkpoint(v_path), v_path);
    return m;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_tree_build(const std::string& diseases_path,
                           const std::optional<std::string>& oncotree_path,
                           const std::string& out_path, std::ostream& out, std::ostream& err) {
    announce(err, "tree build", 0, {{"diseases", diseases_path}, {"out", out_path}});
    const std::vector<DiseaseRecord> diseases = load_disease_records(diseases_path);
    std::vector<OncoTreeRecord> oncotree;
    if (oncotree_path) oncotree = load_oncotree_records(*oncotree_path);
    auto [tree, log] = build_tree(diseases, oncotree);
    save_tree(tree, out_path);
    out << json{{"nodes", tree.nodes.size()},
                {"tissues", tree.tissues.size()},
                {"merges", log.merges},
                {"deleted", log.deleted},
                {"created_tissues", log.created_tissues}}
               .dump(2)
        << '\n';
}

inline void cmd_tree_stats(const std::string& tree_path, std::ostream& out, std::ostream& err) {
    announce(err, "tree stats", 0, {{"tree", tree_path}});
    const KnowledgeTree tree = load_tree(tree_path);
    out << stats_to_json(tree_stats(tree)).dump(2) << '\n';
}

inline void cmd_synth_gen(const std::string& spec_path, const std::string& out_dir,
                          std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    const SynthSpec spec = synth_spec_from_json(load_json_file(spec_path));
    announce(err, "synth gen", spec.seed, load_json_file(spec_path));
    fs::create_directories(out_dir);

    const std::vector<DiseaseRecord> diseases = gen_knowledge_tree(spec);
    save_disease_records(diseases, (fs::path(out_dir) / "diseases.jsonl").string());
    auto [tree, log] = build_tree(diseases, {});
    save_tree(tree, (fs::path(out_dir) / "tree.json").string());

    const std::vector<PairRecord> pairs = gen_pairs(spec, tree);
    save_pair_records(spec.latent_dim, pairs, (fs::path(out_dir) / "pairs.jsonl").string());

    const SynthEvalSets sets = gen_eval_sets(spec, tree);
    save_patch_records(spec.latent_dim, sets.patches, (fs::path(out_dir) / "patches.jsonl").string());
    save_wsi_records(spec.latent_dim, sets.slides, (fs::path(out_dir) / "wsi.jsonl").string());

    json classes = json::array();
    for (const PromptClass& c : gen_classes(tree))
        classes.push_back({{"name", c.name}, {"synonyms", c.synonyms}});
    {
        std::ofstream f((fs::path(out_dir) / "classes.json").string(), std::ios::binary);
        f << json{{"classes", classes}}.dump(2) << '\n';
    }

    out << json{{"entities", tree.nodes.size()},
                {"pairs", pairs.size()},
                {"patches", sets.patches.size()},
                {"slides", sets.slides.size()},
                {"out_dir", out_dir}}
               .dump(2)
        << '\n';
}

inline void cmd_train_ke(const std::string& tree_path, const ConfigFlags& flags,
                         const std::string& out_path, std::ostream& out, std::ostream& err) {
    TrainConfig cfg = flags.resolve();
    announce(err, "train ke", cfg.seed, config_to_json(cfg));
    const KnowledgeTree tree = load_tree(tree_path);
    Rng rng(cfg.seed);
    auto [params, history] = train_knowledge_encoder(tree, cfg, rng);

    json meta = text_encoder_meta(params);
    meta["config"] = config_to_json(cfg);
    meta["seed"] = cfg.seed;
    save_checkpoint(text_encoder_arrays(params), meta, out_path);
    write_history(history, out_path + ".history.jsonl");

    err << json{{"wall_seconds", history.wall_seconds}}.dump() << '\n';
    out << json{{"checkpoint", out_path},
                {"steps", history.steps.size()},
                {"first_loss", history.steps.front().loss},
                {"final_loss", history.steps.back().loss}}
               .dump(2)
        << '\n';
}

inline void cmd_train_kep(const std::string& pairs_path, const std::string& ke_path,
                          const ConfigFlags& flags, const std::string& out_dir, std::ostream& out,
                          std::ostream& err) {
    namespace fs = std::filesystem;
    TrainConfig cfg = flags.resolve();
    announce(err, "train kep", cfg.seed, config_to_json(cfg));
    auto [dim, pairs] = load_pair_records(pairs_path);
    const Checkpoint ke_ckpt = load_checkpoint(ke_path);
    const TextEncoderParams phi_k = text_encoder_from_checkpoint(ke_ckpt, ke_path);

    fs::create_directories(out_dir);
    Rng rng(cfg.seed);
    KepResult result = train_kep(pairs, dim, phi_k, cfg, rng);

    json meta_v = image_encoder_meta(result.phi_v);
    meta_v["config"] = config_to_json(cfg);
    meta_v["seed"] = cfg.seed;
    save_checkpoint(image_encoder_arrays(result.phi_v), meta_v,
                    (fs::path(out_dir) / "phi_v.ckpt").string());

    json meta_t = text_encoder_meta(result.phi_t);
    meta_t["config"] = config_to_json(cfg);
    meta_t["seed"] = cfg.seed;
    save_checkpoint(text_encoder_arrays(result.phi_t), meta_t,
                    (fs::path(out_dir) / "phi_t.ckpt").string());

    // Frozen branch echoed byte-for-byte: same arrays, same header.
    save_checkpoint(text_encoder_arrays(phi_k), ke_ckpt.meta,
                    (fs::path(out_dir) / "phi_k.ckpt").string());

    write_history(result.history, (fs::path(out_dir) / "history.jsonl").string());

    err << json{{"wall_seconds", result.history.wall_seconds}}.dump() << '\n';
    out << json{{"out_dir", out_dir},
                {"steps", result.history.steps.size()},
                {"first_l_vt", result.history.steps.front().l_vt},
                {"final_l_vt", result.history.steps.back().l_vt}}
               .dump(2)
        << '\n';
}

inline void cmd_eval_retrieval(const std::string& pairs_path, const std::string& models_dir,
                               const std::string& task_name, const std::string& k_csv,
                               const std::optional<std::string>& out_path, std::ostream& out,
                               std::ostream& err) {
    announce(err, "eval retrieval", 0,
             {{"pairs", pairs_path}, {"models", models_dir}, {"task", task_name}, {"k", k_csv}});
    auto [dim, pairs] = load_pair_records(pairs_path);
    const ModelSet models = load_models(models_dir, "t");
    if (models.phi_v.in_dim != dim)
        throw DataError("image encoder expects dimension " + std::to_string(models.phi_v.in_dim) +
                        ", pairs file declares " + std::to_string(dim));
    const RetrievalTask task = retrieval_task_from_name(task_name);
    const std::vector<std::size_t> ks = parse_size_list(k_csv);
    const std::map<std::size_t, double> recalls =
        run_retrieval(pairs, dim, models.phi_t, models.phi_v, task, ks);
    json jr;
    for (const auto& [k, v] : recalls) jr[std::to_string(k)] = v;
    emit_report({{"task", task_name}, {"queries_pairs", pairs.size()}, {"recall", jr}}, out, out_path);
}

inline PromptBank resolve_bank(const std::optional<std::string>& templates_path,
                               const std::string& classes_path) {
    PromptBank bank;
    bank.templates = templates_path ? load_templates(*templates_path) : default_templates();
    bank.classes = load_classes(classes_path);
    validate_prompt_bank(bank);
    return bank;
}

inline void cmd_eval_zeroshot(const std::string& dataset_path, const std::string& classes_path,
                              const std::optional<std::string>& templates_path,
                              const std::string& models_dir, const std::string& text_encoder,
                              std::size_t trials, std::uint64_t seed,
                              const std::optional<std::string>& out_path, std::ostream& out,
                              std::ostream& err) {
    announce(err, "eval zeroshot", seed,
             {{"dataset", dataset_path},
              {"classes", classes_path},
              {"templates", templates_path ? json(*templates_path) : json("builtin")},
              {"models", models_dir},
              {"text_encoder", text_encoder},
              {"trials", trials}});
    auto [dim, patches] = load_patch_records(dataset_path);
    const PromptBank bank = resolve_bank(templates_path, classes_path);
    const ModelSet models = load_models(models_dir, text_encoder);
    if (models.phi_v.in_dim != dim)
        throw DataError("image encoder expects dimension " + std::to_string(models.phi_v.in_dim) +
                        ", dataset declares " + std::to_string(dim));
    const EvalReport report =
        run_patch_zeroshot(bank, models.phi_t, models.phi_v, patches, trials, seed);
    emit_report(report_to_json(report), out, out_path);
}

inline void cmd_eval_wsi(const std::string& dataset_path, const std::string& classes_path,
                         const std::optional<std::string>& templates_path,
                         const std::string& models_dir, const std::string& text_encoder,
                         const std::string& topk_csv, const std::string& pooling_name,
                         std::size_t trials, std::uint64_t seed,
                         const std::optional<std::string>& out_path, std::ostream& out,
                         std::ostream& err) {
    announce(err, "eval wsi", seed,
             {{"dataset", dataset_path},
              {"classes", classes_path},
              {"templates", templates_path ? json(*templates_path) : json("builtin")},
              {"models", models_dir},
              {"text_encoder", text_encoder},
              {"topk", topk_csv},
              {"pool", pooling_name},
              {"trials", trials}});
    auto [dim, slides] = load_wsi_records(dataset_path);
    const PromptBank bank = resolve_bank(templates_path, classes_path);
    const ModelSet models = load_models(models_dir, text_encoder);
    if (models.phi_v.in_dim != dim)
        throw DataError("image encoder expects dimension " + std::to_string(models.phi_v.in_dim) +
                        ", dataset declares " + std::to_string(dim));
    const std::vector<std::size_t> ks = parse_size_list(topk_csv);
    const std::vector<EvalReport> reports =
        run_wsi_zeroshot(bank, models.phi_t, models.phi_v, slides, ks, trials, seed,
                         slide_pooling_from_name(pooling_name));
    json arr = json::array();
    for (const EvalReport& r : reports) arr.push_back(report_to_json(r));
    emit_report(arr, out, out_path);
}

inline void cmd_check_grad(std::uint64_t seed, std::size_t batches, std::ostream& out,
                           std::ostream& err) {
    announce(err, "check grad", seed, {{"batches", batches}});
    const GradSuiteResult r = run_gradient_suite(seed, batches);
    out << json{{"adasp", r.adasp},
                {"triplet", r.triplet},
                {"info_nce", r.info_nce},
                {"kep", r.kep},
                {"seconds", r.seconds},
                {"threshold", 1e-4}}
               .dump(2)
        << '\n';
    if (r.worst() > 1e-4)
        throw NumericError("gradient check failed: worst relative error " +
                           std::to_string(r.worst()));
}

// Retrieval scores after one KEP run; the shared tail of both ablation presets.
inline json ablate_eval(const std::vector<PairRecord>& pairs, std::size_t dim,
                        const TextEncoderParams& phi_t, const ImageEncoderParams& phi_v) {
    const std::vector<std::size_t> ks = {1, 5};
    json out;
    for (const auto& [task, name] :
         std::vector<std::pair<RetrievalTask, const char*>>{{RetrievalTask::LabelToText, "l2t"},
                                                            {RetrievalTask::ImageToLabel, "i2l"}}) {
        const std::map<std::size_t, double> recalls = run_retrieval(pairs, dim, phi_t, phi_v, task, ks);
        for (const auto& [k, v] : recalls) out[std::string(name) + "_r" + std::to_string(k)] = v;
    }
    return out;
}

inline void cmd_ablate_alpha(const std::string& pairs_path, const std::string& ke_path,
                             const ConfigFlags& flags, const std::string& alphas_csv,
                             const std::optional<std::string>& out_path, std::ostream& out,
                             std::ostream& err) {
    TrainConfig base = flags.resolve();
    announce(err, "ablate-alpha", base.seed, config_to_json(base));
    auto [dim, pairs] = load_pair_records(pairs_path);
    const TextEncoderParams phi_k = load_text_checkpoint(ke_path);
    const std::vector<double> alphas = parse_double_list(alphas_csv);

    json rows = json::array();
    for (double alpha : alphas) {
        TrainConfig cfg = base;
        cfg.alpha = alpha;
        cfg.distillation = true;
        Rng rng(cfg.seed);
        const KepResult r = train_kep(pairs, dim, phi_k, cfg, rng);
        json row = ablate_eval(pairs, dim, r.phi_t, r.phi_v);
        row["alpha"] = alpha;
        rows.push_back(std::move(row));
        err << json{{"alpha", alpha}, {"done", true}}.dump() << '\n';
    }
    emit_report(rows, out, out_path);
}

inline void cmd_ablate_arch(const std::string& tree_path, const std::string& pairs_path,
                            const ConfigFlags& flags, const std::optional<std::string>& out_path,
                            std::ostream& out, std::ostream& err) {
    TrainConfig base = flags.resolve();
    announce(err, "ablate-arch", base.seed, config_to_json(base));
    const KnowledgeTree tree = load_tree(tree_path);
    auto [dim, pairs] = load_pair_records(pairs_path);

    json rows = json::array();
    for (MetricLoss metric : {MetricLoss::AdaSP, MetricLoss::Triplet}) {
        TrainConfig ke_cfg = base;
        ke_cfg.metric = metric;
        Rng ke_rng(ke_cfg.seed);
        auto [phi_k, ke_hist] = train_knowledge_encoder(tree, ke_cfg, ke_rng);
        for (bool head : {true, false}) {
            for (bool distill : {true, false}) {
                TrainConfig cfg = base;
                cfg.metric = metric;
                cfg.projection_head = head;
                cfg.distillation = distill;
                Rng rng(cfg.seed);
                const KepResult r = train_kep(pairs, dim, phi_k, cfg, rng);
                json row = ablate_eval(pairs, dim, r.phi_t, r.phi_v);
                row["metric"] = metric_loss_name(metric);
                row["projection_head"] = head;
                row["distillation"] = distill;
                rows.push_back(std::move(row));
                err << json{{"metric", metric_loss_name(metric)},
                            {"projection_head", head},
                            {"distillation", distill},
                            {"done", true}}
                           .dump()
                    << '\n';
            }
        }
    }
    emit_report(rows, out, out_path);
}

}  // namespace detail

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
inline int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    using namespace detail;
    CLI::App app{"knowledge-tree guided image-text alignment pipeline"};
    app.require_subcommand(1);

    // tree
    CLI::App* tree = app.add_subcommand("tree", "knowledge tree construction and statistics");
    tree->require_subcommand(1);
    std::string diseases_path, oncotree_path_raw, tree_out, tree_path;
    CLI::App* tree_build_cmd = tree->add_subcommand("build", "build a tree from record files");
    tree_build_cmd->add_option("--diseases", diseases_path, "disease records (JSON Lines)")
        ->required();
    CLI::Option* oncotree_opt =
        tree_build_cmd->add_option("--oncotree", oncotree_path_raw, "backbone records (JSON Lines)");
    tree_build_cmd->add_option("--out", tree_out, "output tree JSON")->required();
    CLI::App* tree_stats_cmd = tree->add_subcommand("stats", "print tree statistics");
    tree_stats_cmd->add_option("--tree", tree_path, "tree JSON")->required();

    // synth
    CLI::App* synth = app.add_subcommand("synth", "synthetic dataset generation");
    synth->require_subcommand(1);
    std::string synth_spec_path, synth_out_dir;
    CLI::App* synth_gen_cmd = synth->add_subcommand("gen", "generate a synthetic corpus");
    synth_gen_cmd->add_option("--spec", synth_spec_path, "synth spec JSON")->required();
    synth_gen_cmd->add_option("--out-dir", synth_out_dir, "output directory")->required();

    // train
    CLI::App* train = app.add_subcommand("train", "training stages");
    train->require_subcommand(1);
    std::string ke_tree_path, ke_out;
    ConfigFlags ke_flags;
    CLI::App* train_ke_cmd = train->add_subcommand("ke", "pretrain the knowledge encoder");
    train_ke_cmd->add_option("--tree", ke_tree_path, "tree JSON")->required();
    train_ke_cmd->add_option("--out", ke_out, "output checkpoint")->required();
    ke_flags.add_to(train_ke_cmd);

    std::string kep_pairs_path, kep_ke_path, kep_out_dir;
    ConfigFlags kep_flags;
    CLI::App* train_kep_cmd = train->add_subcommand("kep", "align image and text encoders");
    train_kep_cmd->add_option("--pairs", kep_pairs_path, "pair records (JSON Lines)")->required();
    train_kep_cmd->add_option("--ke", kep_ke_path, "pretrained knowledge encoder checkpoint")
        ->required();
    train_kep_cmd->add_option("--out-dir", kep_out_dir, "output directory")->required();
    kep_flags.add_to(train_kep_cmd);

    // eval
    CLI::App* eval = app.add_subcommand("eval", "evaluation protocols");
    eval->require_subcommand(1);
    std::string retr_pairs, retr_models, retr_task, retr_k = "10,50";
    std::optional<std::string> retr_out;
    CLI::App* eval_retrieval_cmd = eval->add_subcommand("retrieval", "recall@K retrieval");
    eval_retrieval_cmd->add_option("--pairs", retr_pairs, "pair records")->required();
    eval_retrieval_cmd->add_option("--models", retr_models, "model directory")->required();
    eval_retrieval_cmd->add_option("--task", retr_task, "i2t, t2i, l2t or i2l")->required();
    eval_retrieval_cmd->add_option("--k", retr_k, "comma-separated K list");
    eval_retrieval_cmd->add_option("--out", retr_out, "also write the report here");

    std::string zs_dataset, zs_classes, zs_models, zs_text = "t";
    std::optional<std::string> zs_templates;
    std::size_t zs_trials = 100;
    std::uint64_t zs_seed = 0;
    std::optional<std::string> zs_out;
    CLI::App* eval_zeroshot_cmd = eval->add_subcommand("zeroshot", "zero-shot patch classification");
    eval_zeroshot_cmd->add_option("--dataset", zs_dataset, "patch records")->required();
    eval_zeroshot_cmd->add_option("--classes", zs_classes, "class synonym file")->required();
    eval_zeroshot_cmd->add_option("--templates", zs_templates,
                                  "prompt template file (default: built-in bank)");
    eval_zeroshot_cmd->add_option("--models", zs_models, "model directory")->required();
    eval_zeroshot_cmd->add_option("--text-encoder", zs_text, "t (aligned) or k (knowledge)");
    eval_zeroshot_cmd->add_option("--trials", zs_trials, "prompt trials");
    eval_zeroshot_cmd->add_option("--seed", zs_seed, "prompt sampling seed");
    eval_zeroshot_cmd->add_option("--out", zs_out, "also write the report here");

    std::string wsi_dataset, wsi_classes, wsi_models, wsi_text = "t";
    std::optional<std::string> wsi_templates;
    std::string wsi_topk = "1,5,10,50";
    std::string wsi_pool = "mean";
    std::size_t wsi_trials = 100;
    std::uint64_t wsi_seed = 0;
    std::optional<std::string> wsi_out;
    CLI::App* eval_wsi_cmd = eval->add_subcommand("wsi", "zero-shot WSI subtyping");
    eval_wsi_cmd->add_option("--dataset", wsi_dataset, "WSI records")->required();
    eval_wsi_cmd->add_option("--classes", wsi_classes, "class synonym file")->required();
    eval_wsi_cmd->add_option("--templates", wsi_templates,
                             "prompt template file (default: built-in bank)");
    eval_wsi_cmd->add_option("--models", wsi_models, "model directory")->required();
    eval_wsi_cmd->add_option("--text-encoder", wsi_text, "t (aligned) or k (knowledge)");
    eval_wsi_cmd->add_option("--topk", wsi_topk, "comma-separated pooling K list");
    eval_wsi_cmd->add_option("--pool", wsi_pool, "slide pooling: mean (top-K mean) or vote");
    eval_wsi_cmd->add_option("--trials", wsi_trials, "prompt trials");
    eval_wsi_cmd->add_option("--seed", wsi_seed, "prompt sampling seed");
    eval_wsi_cmd->add_option("--out", wsi_out, "also write the report here");

    // check
    CLI::App* check = app.add_subcommand("check", "self checks");
    check->require_subcommand(1);
    std::uint64_t grad_seed = 0;
    std::size_t grad_batches = 20;
    CLI::App* check_grad_cmd = check->add_subcommand("grad", "finite-difference gradient suite");
    check_grad_cmd->add_option("--seed", grad_seed, "suite seed");
    check_grad_cmd->add_option("--batches", grad_batches, "batches per loss");

    // ablation presets
    std::string aa_pairs, aa_ke, aa_alphas = "0.01,0.05,0.1,0.3,0.5,0.7,0.9";
    std::optional<std::string> aa_out;
    ConfigFlags aa_flags;
    CLI::App* ablate_alpha_cmd = app.add_subcommand("ablate-alpha", "sweep the distillation weight");
    ablate_alpha_cmd->add_option("--pairs", aa_pairs, "pair records")->required();
    ablate_alpha_cmd->add_option("--ke", aa_ke, "knowledge encoder checkpoint")->required();
    ablate_alpha_cmd->add_option("--alphas", aa_alphas, "comma-separated alpha grid");
    ablate_alpha_cmd->add_option("--out", aa_out, "also write the report here");
    aa_flags.add_to(ablate_alpha_cmd);

    std::string ar_tree, ar_pairs;
    std::optional<std::string> ar_out;
    ConfigFlags ar_flags;
    CLI::App* ablate_arch_cmd =
        app.add_subcommand("ablate-arch", "sweep head / distillation / metric-loss axes");
    ablate_arch_cmd->add_option("--tree", ar_tree, "tree JSON")->required();
    ablate_arch_cmd->add_option("--pairs", ar_pairs, "pair records")->required();
    ablate_arch_cmd->add_option("--out", ar_out, "also write the report here");
    ar_flags.add_to(ablate_arch_cmd);

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);

        if (tree_build_cmd->parsed()) {
            std::optional<std::string> oncotree_path;
            if (oncotree_opt->count() > 0) oncotree_path = oncotree_path_raw;
            cmd_tree_build(diseases_path, oncotree_path, tree_out, out, err);
        } else if (tree_stats_cmd->parsed()) {
            cmd_tree_stats(tree_path, out, err);
        } else if (synth_gen_cmd->parsed()) {
            cmd_synth_gen(synth_spec_path, synth_out_dir, out, err);
        } else if (train_ke_cmd->parsed()) {
            cmd_train_ke(ke_tree_path, ke_flags, ke_out, out, err);
        } else if (train_kep_cmd->parsed()) {
            cmd_train_kep(kep_pairs_path, kep_ke_path, kep_flags, kep_out_dir, out, err);
        } else if (eval_retrieval_cmd->parsed()) {
            cmd_eval_retrieval(retr_pairs, retr_models, retr_task, retr_k, retr_out, out, err);
        } else if (eval_zeroshot_cmd->parsed()) {
            cmd_eval_zeroshot(zs_dataset, zs_classes, zs_templates, zs_models, zs_text, zs_trials,
                              zs_seed, zs_out, out, err);
        } else if (eval_wsi_cmd->parsed()) {
            cmd_eval_wsi(wsi_dataset, wsi_classes, wsi_templates, wsi_models, wsi_text, wsi_topk,
                         wsi_pool, wsi_trials, wsi_seed, wsi_out, out, err);
        } else if (check_grad_cmd->parsed()) {
            cmd_check_grad(grad_seed, grad_batches, out, err);
        } else if (ablate_alpha_cmd->parsed()) {
            cmd_ablate_alpha(aa_pairs, aa_ke, aa_flags, aa_alphas, aa_out, out, err);
        } else if (ablate_arch_cmd->parsed()) {
            cmd_ablate_arch(ar_tree, ar_pairs, ar_flags, ar_out, out, err);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace pathalign::cli
