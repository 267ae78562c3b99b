// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pathalign/cli.hpp"
#include "pathalign/evaluation.hpp"
#include "pathalign/gradsuite.hpp"
#include "pathalign/io.hpp"
#include "pathalign/knowledge_tree.hpp"
#include "pathalign/objectives.hpp"
#include "pathalign/synth.hpp"
#include "pathalign/training.hpp"

namespace fs = std::filesystem;
using namespace pathalign;

namespace {

struct Harness {
    int failed = 0;

    void run(const std::string& name, const std::function<void()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("[PASS] %s (%.1fs)\n", name.c_str(), secs);
        } catch (const std::exception& e) {
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("[FAIL] %s (%.1fs): %s\n", name.c_str(), secs, e.what());
            ++failed;
        }
        std::fflush(stdout);
    }
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

std::string data_file(const std::string& rel) { return std::string(PATHALIGN_DATA_DIR) + "/" + rel; }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string checkpoint_bytes(const TextEncoderParams& p) {
    const auto path = fs::temp_directory_path() / "pathalign_accept_cmp.ckpt";
    save_checkpoint(text_encoder_arrays(p), text_encoder_meta(p), path.string());
    const std::string bytes = read_file(path.string());
    fs::remove(path);
    return bytes;
}

double hard_maxmin(const Tensor2& block) {
    double best = -2.0;
    for (std::size_t p = 0; p < block.rows; ++p) {
        double worst = 2.0;
        for (std::size_t q = 0; q < block.cols; ++q) worst = std::min(worst, block.at(p, q));
        best = std::max(best, worst);
    }
    return best;
}

// ---- shared synthetic-ablation plumbing -----------------------------------

// The pinned acceptance corpus: 60 entities, token/feature noise 0.2.
SynthSpec accept_spec() {
    std::ifstream in(data_file("synth_accept.json"));
    json j;
    in >> j;
    return synth_spec_from_json(j);
}

constexpr std::uint64_t kAblationSeeds[3] = {11, 22, 33};

TrainConfig accept_ke_config(std::uint64_t seed, MetricLoss metric) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.metric = metric;
    cfg.epochs = 80;
    cfg.steps_per_epoch = 4;
    cfg.entities_per_batch = 16;
    cfg.instances_per_entity = 4;
    cfg.lr = 0.02;
    cfg.vocab = 2048;
    cfg.hidden = 32;
    return cfg;
}

TrainConfig accept_kep_config(std::uint64_t seed, double alpha) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.alpha = alpha;
    cfg.epochs = 20;
    cfg.pair_batch = 128;
    cfg.lr = 0.05;
    cfg.vocab = 2048;
    cfg.hidden = 32;
    return cfg;
}

// Attribute -> entity retrieval: every attribute text queries the gallery of
// entity-name embeddings.
double attribute_entity_recall1(const KnowledgeTree& tree, const TextEncoderParams& params) {
    const Tokenizer tok{params.vocab};
    std::vector<std::string> names;
    for (const DiseaseNode& n : tree.nodes) names.push_back(n.name);
    const Tensor2 gallery = encode_text_batch(params, tok, names);

    std::vector<std::string> attr_texts;
    std::vector<std::vector<std::size_t>> positives;
    for (std::size_t e = 0; e < tree.nodes.size(); ++e)
        for (const Attribute& a : tree.nodes[e].attributes) {
            attr_texts.push_back(a.text);
            positives.push_back({e});
        }
    const Tensor2 queries = encode_text_batch(params, tok, attr_texts);
    return recall_at_k(queries, gallery, positives, 1);
}

double l2t_recall1(const std::vector<PairRecord>& pairs, std::size_t dim,
                   const TextEncoderParams& phi_t, const ImageEncoderParams& phi_v) {
    return run_retrieval(pairs, dim, phi_t, phi_v, RetrievalTask::LabelToText, {1}).at(1);
}

}  // namespace

int main() {
    Harness h;

    // ------------------------------------------------------------------ A1
    h.run("A1 gradient suite: four losses vs central finite differences (<= 1e-4, <= 120s)", [] {
        const GradSuiteResult r = run_gradient_suite(101, 20);
        require(r.adasp <= 1e-4, "adasp gradient error " + std::to_string(r.adasp));
        require(r.triplet <= 1e-4, "triplet gradient error " + std::to_string(r.triplet));
        require(r.info_nce <= 1e-4, "info_nce gradient error " + std::to_string(r.info_nce));
        require(r.kep <= 1e-4, "kep gradient error " + std::to_string(r.kep));
        require(r.seconds <= 120.0, "suite took " + std::to_string(r.seconds) + "s");
    });

    // ------------------------------------------------------------------ A2
    h.run("A2 soft-hard bounds on 1000 random batches; tau=1e-3 gaps <= 1e-2", [] {
        Rng rng(202);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t n = 2 + rng.uniform_int(7), k = 2 + rng.uniform_int(7);
            const Tensor2 z = gradsuite_detail::random_unit_rows(n * k, 8, rng);
            const Tensor2 s = matmul_nt(z, z);
            for (const double tau : {0.04, 1e-3}) {
                for (std::size_t i = 0; i < n; ++i) {
                    Tensor2 block(k, k);
                    for (std::size_t p = 0; p < k; ++p)
                        for (std::size_t q = 0; q < k; ++q)
                            block.at(p, q) = s.at(i * k + p, i * k + q);
                    Tensor2 cross(k, (n - 1) * k);
                    std::size_t col = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        if (j == i) continue;
                        for (std::size_t q = 0; q < k; ++q, ++col)
                            for (std::size_t p = 0; p < k; ++p)
                                cross.at(p, col) = s.at(i * k + p, j * k + q);
                    }
                    const double sp = soft_maxmin_positive(block, tau);
                    const double sn = soft_max_negative(cross, tau);
                    const double mm = hard_maxmin(block);
                    const double mx =
                        *std::max_element(cross.values.begin(), cross.values.end());
                    const double pos_gap = std::abs(sp - mm);
                    const double neg_gap = sn - mx;
                    require(pos_gap <= tau * std::log(double(k)) + 1e-12, "S+ bound violated");
                    require(neg_gap >= -1e-12, "S- below hard max");
                    require(neg_gap <= tau * std::log(double(k * k * (n - 1))) + 1e-12,
                            "S- bound violated");
                    if (tau == 1e-3) {
                        require(pos_gap <= 1e-2, "S+ gap above 1e-2 at tau=1e-3");
                        require(neg_gap <= 1e-2, "S- gap above 1e-2 at tau=1e-3");
                    }
                }
            }
        }
    });

    // ------------------------------------------------------------------ A3
    h.run("A3 closed-form loss values (1e-9; n=1 InfoNCE exactly 0)", [] {
        for (const auto& [n, k] : std::vector<std::pair<std::size_t, std::size_t>>{
                 {2, 2}, {3, 2}, {2, 4}, {4, 3}, {8, 8}}) {
            EmbeddingBatch emb{n, k, Tensor2(n * k, 5)};
            for (std::size_t r = 0; r < n * k; ++r) emb.embeddings.at(r, 1) = 1.0;
            const double expected = std::log(1.0 + double(k * k * (n - 1)));
            const double got = adasp_loss(emb, 0.04).loss;
            require(std::abs(got - expected) <= 1e-9,
                    "adasp closed form off by " + std::to_string(got - expected));
        }
        for (const std::size_t n : {2, 3, 5, 8}) {
            Tensor2 a(n, 3), b(n, 3);
            for (std::size_t i = 0; i < n; ++i) {
                a.at(i, 0) = 1.0;
                b.at(i, 1) = 1.0;
            }
            const double got = info_nce(a, b, 0.04).loss;
            require(std::abs(got - 2.0 * std::log(double(n))) <= 1e-9, "uniform InfoNCE off");
        }
        Rng rng(3);
        const Tensor2 a = gradsuite_detail::random_unit_rows(1, 6, rng);
        const Tensor2 b = gradsuite_detail::random_unit_rows(1, 6, rng);
        require(info_nce(a, b, 0.04).loss == 0.0, "n=1 InfoNCE must be exactly zero");
    });

    // ------------------------------------------------------------------ A4
    h.run("A4 metric operations match brute-force oracles on 200 instances (<= 1e-12, <= 60s)", [] {
        Rng rng(404);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t num_classes = 2 + rng.uniform_int(5);
            const std::size_t items = 5 + rng.uniform_int(30);

            // predictions / labels for classification metrics
            std::vector<std::size_t> preds(items), labels(items);
            for (std::size_t i = 0; i < items; ++i) {
                preds[i] = rng.uniform_int(num_classes);
                labels[i] = rng.uniform_int(num_classes);
            }
            labels[0] = 0;  // at least one supported class

            {  // weighted F1 oracle
                double expected = 0.0;
                for (std::size_t c = 0; c < num_classes; ++c) {
                    double tp = 0, fp = 0, fn = 0, support = 0;
                    for (std::size_t i = 0; i < items; ++i) {
                        if (labels[i] == c) ++support;
                        if (preds[i] == c && labels[i] == c) ++tp;
                        if (preds[i] == c && labels[i] != c) ++fp;
                        if (preds[i] != c && labels[i] == c) ++fn;
                    }
                    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
                    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
                    const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
                    expected += f1 * support;
                }
                expected /= double(items);
                require(std::abs(weighted_f1(preds, labels, num_classes) - expected) <= 1e-12,
                        "weighted_f1 disagrees with oracle");
            }
            {  // balanced accuracy oracle
                double total = 0.0;
                std::size_t present = 0;
                for (std::size_t c = 0; c < num_classes; ++c) {
                    double tp = 0, support = 0;
                    for (std::size_t i = 0; i < items; ++i)
                        if (labels[i] == c) {
                            ++support;
                            if (preds[i] == c) ++tp;
                        }
                    if (support > 0) {
                        total += tp / support;
                        ++present;
                    }
                }
                require(std::abs(balanced_accuracy(preds, labels, num_classes) - total / present) <=
                            1e-12,
                        "balanced_accuracy disagrees with oracle");
            }
            {  // zero-shot classify oracle
                Tensor2 images(items, 6), classes(num_classes, 6);
                for (double& v : images.values) v = rng.gauss();
                for (double& v : classes.values) v = rng.gauss();
                const auto got = zero_shot_classify(images, classes);
                for (std::size_t i = 0; i < items; ++i) {
                    std::size_t best = 0;
                    double best_score = dot(images.row(i), classes.row(0));
                    for (std::size_t c = 1; c < num_classes; ++c) {
                        const double sc = dot(images.row(i), classes.row(c));
                        if (sc > best_score) {
                            best_score = sc;
                            best = c;
                        }
                    }
                    require(got[i] == best, "zero_shot_classify disagrees with oracle");
                }
            }
            {  // top-k pooling oracle
                const std::size_t patches = 2 + rng.uniform_int(12);
                Tensor2 scores(patches, num_classes);
                for (double& v : scores.values) v = rng.gauss();
                const std::size_t kk = 1 + rng.uniform_int(patches + 2);
                std::size_t best = 0;
                double best_pool = -1e300;
                for (std::size_t c = 0; c < num_classes; ++c) {
                    std::vector<double> col;
                    for (std::size_t p = 0; p < patches; ++p) col.push_back(scores.at(p, c));
                    std::sort(col.rbegin(), col.rend());
                    const std::size_t take = std::min(kk, patches);
                    double pool = 0.0;
                    for (std::size_t i = 0; i < take; ++i) pool += col[i];
                    pool /= double(take);
                    if (pool > best_pool) {
                        best_pool = pool;
                        best = c;
                    }
                }
                require(topk_pool_slide(scores, kk) == best, "topk_pool_slide disagrees with oracle");
            }
            {  // recall@k oracle
                const std::size_t queries_n = 4 + rng.uniform_int(10);
                const std::size_t gallery_n = 4 + rng.uniform_int(12);
                Tensor2 queries(queries_n, 5), gallery(gallery_n, 5);
                for (double& v : queries.values) v = rng.gauss();
                for (double& v : gallery.values) v = rng.gauss();
                std::vector<std::vector<std::size_t>> positives(queries_n);
                for (auto& p : positives) p.push_back(rng.uniform_int(gallery_n));
                const std::size_t kk = 1 + rng.uniform_int(gallery_n);
                std::size_t hits = 0;
                for (std::size_t q = 0; q < queries_n; ++q) {
                    std::vector<std::pair<double, std::size_t>> ranked;
                    for (std::size_t g = 0; g < gallery_n; ++g)
                        ranked.push_back({-dot(queries.row(q), gallery.row(g)), g});
                    std::sort(ranked.begin(), ranked.end());
                    for (std::size_t r = 0; r < kk; ++r)
                        if (ranked[r].second == positives[q][0]) {
                            ++hits;
                            break;
                        }
                }
                require(std::abs(recall_at_k(queries, gallery, positives, kk) -
                                 double(hits) / double(queries_n)) <= 1e-12,
                        "recall_at_k disagrees with oracle");
            }
        }
    });

    // ----------------------------------------------------------- A5 prep
    const SynthSpec spec = accept_spec();
    const std::vector<DiseaseRecord> records = gen_knowledge_tree(spec);
    auto [tree, build_log] = build_tree(records, {});
    const std::vector<PairRecord> pairs = gen_pairs(spec, tree);

    // ------------------------------------------------------------------ A5
    h.run("A5 synthetic KE ablation: AdaSP attribute->entity R@1 >= triplet on 3 seeds (<= 300s)",
          [&] {
              for (const std::uint64_t seed : kAblationSeeds) {
                  Rng adasp_rng(seed);
                  auto [adasp_params, adasp_hist] = train_knowledge_encoder(
                      tree, accept_ke_config(seed, MetricLoss::AdaSP), adasp_rng);
                  Rng triplet_rng(seed);
                  auto [triplet_params, triplet_hist] = train_knowledge_encoder(
                      tree, accept_ke_config(seed, MetricLoss::Triplet), triplet_rng);
                  const double adasp_r1 = attribute_entity_recall1(tree, adasp_params);
                  const double triplet_r1 = attribute_entity_recall1(tree, triplet_params);
                  std::printf("       seed %llu: adasp R@1 %.4f, triplet R@1 %.4f\n",
                              static_cast<unsigned long long>(seed), adasp_r1, triplet_r1);
                  require(adasp_r1 >= triplet_r1,
                          "triplet beat adasp at seed " + std::to_string(seed));
              }
          });

    // ------------------------------------------------------------------ A6
    TextEncoderParams phi_k;
    {
        Rng rng(11);
        phi_k = train_knowledge_encoder(tree, accept_ke_config(11, MetricLoss::AdaSP), rng).first;
    }
    h.run("A6 synthetic distillation ablation: l2t R@1 alpha=0.3 >= alpha=0 on >= 2 of 3 seeds "
          "(<= 300s)",
          [&] {
              int wins = 0;
              for (const std::uint64_t seed : kAblationSeeds) {
                  Rng rng_a(seed), rng_b(seed);
                  const KepResult with = train_kep(pairs, spec.latent_dim, phi_k,
                                                   accept_kep_config(seed, 0.3), rng_a);
                  const KepResult without = train_kep(pairs, spec.latent_dim, phi_k,
                                                      accept_kep_config(seed, 0.0), rng_b);
                  const double r_with = l2t_recall1(pairs, spec.latent_dim, with.phi_t, with.phi_v);
                  const double r_without =
                      l2t_recall1(pairs, spec.latent_dim, without.phi_t, without.phi_v);
                  std::printf("       seed %llu: alpha=0.3 R@1 %.4f, alpha=0 R@1 %.4f\n",
                              static_cast<unsigned long long>(seed), r_with, r_without);
                  if (r_with >= r_without) ++wins;
              }
              require(wins >= 2, "distillation won on only " + std::to_string(wins) + " of 3 seeds");
          });

    // ------------------------------------------------------------------ A7
    h.run("A7 frozen-branch invariance: phi_k bytes identical across train_kep", [&] {
        const std::string before = checkpoint_bytes(phi_k);
        Rng rng(55);
        const KepResult r = train_kep(pairs, spec.latent_dim, phi_k, accept_kep_config(55, 0.3), rng);
        require(checkpoint_bytes(phi_k) == before, "phi_k bytes changed");
        (void)r;
    });

    // ------------------------------------------------------------------ A8
    h.run("A8 determinism: train ke / train kep / eval zeroshot byte-identical across reruns", [] {
        const fs::path root = fs::temp_directory_path() / "pathalign_accept_a8";
        fs::remove_all(root);
        fs::create_directories(root);
        const auto at = [&](const std::string& n) { return (root / n).string(); };

        {
            std::ofstream f(at("spec.json"));
            f << R"({"entities":10,"tissues":2,"attrs_min":4,"attrs_max":6,"latent_dim":8,
                     "noise":0.1,"seed":6,"pairs":64,"patches_per_class":3,"wsi_per_class":1,
                     "wsi_patches":8,"wsi_true_fraction":0.3})";
        }
        std::ostringstream sink_out, sink_err;
        auto call = [&](const std::vector<std::string>& args) {
            const int code = cli::dispatch(args, sink_out, sink_err);
            require(code == 0, "dispatch failed: " + sink_err.str());
        };

        call({"synth", "gen", "--spec", at("spec.json"), "--out-dir", at("corpus")});
        for (const char* run : {"r1", "r2"}) {
            fs::create_directories(at(run));
            call({"train", "ke", "--tree", at("corpus/tree.json"), "--out", at(std::string(run) + "/ke.ckpt"),
                  "--seed", "9", "--epochs", "3", "--steps-per-epoch", "2", "--n", "4", "--k", "3"});
            call({"train", "kep", "--pairs", at("corpus/pairs.jsonl"), "--ke",
                  at(std::string(run) + "/ke.ckpt"), "--out-dir", at(std::string(run) + "/kep"),
                  "--seed", "9", "--epochs", "2", "--pair-batch", "16"});
            call({"eval", "zeroshot", "--dataset", at("corpus/patches.jsonl"), "--classes",
                  at("corpus/classes.json"), "--templates", data_file("prompt_templates.json"),
                  "--models", at(std::string(run) + "/kep"), "--trials", "20", "--seed", "4",
                  "--out", at(std::string(run) + "/zeroshot.json")});
        }
        for (const char* rel :
             {"ke.ckpt", "ke.ckpt.history.jsonl", "kep/phi_v.ckpt", "kep/phi_t.ckpt",
              "kep/phi_k.ckpt", "kep/history.jsonl", "zeroshot.json"}) {
            require(read_file(at(std::string("r1/") + rel)) == read_file(at(std::string("r2/") + rel)),
                    std::string("artifact differs across reruns: ") + rel);
        }
        fs::remove_all(root);
    });

    // ------------------------------------------------------------------ A9
    h.run("A9 prompt protocol fidelity: 21 verbatim templates; 100 trials; quartile shape", [] {
        const std::vector<std::string> expected = {
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
        const std::vector<std::string> shipped = load_templates(data_file("prompt_templates.json"));
        require(shipped.size() == 21, "template bank must hold exactly 21 templates");
        for (std::size_t i = 0; i < 21; ++i)
            require(shipped[i] == expected[i], "template " + std::to_string(i) + " not verbatim");

        const PromptBank bank =
            load_prompt_bank(data_file("prompt_templates.json"), data_file("classes/tcga_nsclc.json"));
        const auto trials = generate_prompts(bank, Rng(1), 100);
        require(trials.size() == 100, "trial count must be 100");
        for (const PromptTrial& t : trials)
            require(t.prompts.size() == bank.classes.size(), "one prompt per class per trial");

        // reporting shape: median between Q1 and Q3 over 100 trial scores
        Rng rng(5);
        std::vector<double> values(100);
        for (double& v : values) v = rng.uniform();
        const Quartiles q = quartile_report(values);
        require(q.q1 <= q.median && q.median <= q.q3, "quartile ordering violated");
    });

    // ------------------------------------------------------------------ A10
    h.run("A10 tree fixture: build output and stats match the golden file exactly", [] {
        const auto diseases = load_disease_records(data_file("fixtures/tree_diseases.jsonl"));
        const auto oncotree = load_oncotree_records(data_file("fixtures/tree_oncotree.jsonl"));
        require(diseases.size() + oncotree.size() == 12, "fixture must hold 12 records");
        auto [tree, log] = build_tree(diseases, oncotree);
        require(tree.nodes.size() == 10, "fixture must build 10 nodes");
        require(log.merges == 1, "fixture must log exactly one merge");
        require(log.deleted == 1, "fixture must log exactly one deletion");

        const json got = {{"tree", tree_to_json(tree)}, {"stats", stats_to_json(tree_stats(tree))}};
        const std::string golden = read_file(data_file("golden/tree_fixture_golden.json"));
        require(got.dump(2) + "\n" == golden, "build output diverges from the golden file");
    });

    if (h.failed == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criterion(s) failed\n", h.failed);
    return 1;
}
