#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pathalign/io.hpp"
#include "pathalign/synth.hpp"
#include "pathalign/training.hpp"

using namespace pathalign;

namespace {

SynthSpec tiny_spec() {
    SynthSpec spec;
    spec.entities = 10;
    spec.tissues = 2;
    spec.attrs_min = 4;
    spec.attrs_max = 6;
    spec.latent_dim = 8;
    spec.noise = 0.05;
    spec.seed = 3;
    spec.pairs = 48;
    return spec;
}

KnowledgeTree tiny_tree() {
    auto [tree, log] = build_tree(gen_knowledge_tree(tiny_spec()), {});
    return tree;
}

TrainConfig tiny_ke_config() {
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.epochs = 25;
    cfg.steps_per_epoch = 2;
    cfg.entities_per_batch = 4;
    cfg.instances_per_entity = 3;
    cfg.lr = 5e-2;
    cfg.vocab = 512;
    cfg.hidden = 16;
    return cfg;
}

TrainConfig tiny_kep_config() {
    TrainConfig cfg = tiny_ke_config();
    cfg.epochs = 12;
    cfg.pair_batch = 16;
    return cfg;
}

std::string checkpoint_bytes(const TextEncoderParams& p) {
    const auto path = std::filesystem::temp_directory_path() / "pathalign_train_cmp.ckpt";
    save_checkpoint(text_encoder_arrays(p), text_encoder_meta(p), path.string());
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::filesystem::remove(path);
    return ss.str();
}

}  // namespace

TEST_CASE("sgd_step") {
    SECTION("plain step without momentum") {
        Tensor2 p(1, 1);
        Tensor2 g(1, 1);
        g.at(0, 0) = 1.0;
        SgdState state;
        sgd_step({{"p", &p}}, {g}, 0.1, 0.0, state);
        REQUIRE(p.at(0, 0) == Catch::Approx(-0.1).margin(1e-15));
    }
    SECTION("momentum accumulates over two steps") {
        Tensor2 p(1, 1);
        Tensor2 g(1, 1);
        g.at(0, 0) = 1.0;
        SgdState state;
        sgd_step({{"p", &p}}, {g}, 1.0, 0.9, state);
        REQUIRE(p.at(0, 0) == Catch::Approx(-1.0).margin(1e-15));
        sgd_step({{"p", &p}}, {g}, 1.0, 0.9, state);
        REQUIRE(p.at(0, 0) == Catch::Approx(-2.9).margin(1e-15));
    }
    SECTION("zero gradients leave parameters unchanged") {
        Tensor2 p(2, 2);
        p.values = {1.0, 2.0, 3.0, 4.0};
        const Tensor2 before = p;
        SgdState state;
        sgd_step({{"p", &p}}, {Tensor2(2, 2)}, 0.5, 0.9, state);
        REQUIRE(p.values == before.values);
    }
    SECTION("non-finite gradients abort with the parameter name") {
        Tensor2 p(1, 1);
        Tensor2 g(1, 1);
        g.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
        SgdState state;
        REQUIRE_THROWS_WITH(sgd_step({{"spikey", &p}}, {g}, 0.1, 0.0, state),
                            Catch::Matchers::ContainsSubstring("spikey"));
    }
}

TEST_CASE("train_knowledge_encoder") {
    const KnowledgeTree tree = tiny_tree();
    const TrainConfig cfg = tiny_ke_config();

    SECTION("loss decreases over the run") {
        Rng rng(cfg.seed);
        auto [params, hist] = train_knowledge_encoder(tree, cfg, rng);
        REQUIRE(hist.steps.size() == cfg.epochs * cfg.steps_per_epoch);
        REQUIRE(hist.steps.back().loss < hist.steps.front().loss);
        REQUIRE(hist.loss_label == "adasp");
    }
    SECTION("same seed twice gives bitwise-identical checkpoints") {
        Rng r1(cfg.seed), r2(cfg.seed);
        auto [p1, h1] = train_knowledge_encoder(tree, cfg, r1);
        auto [p2, h2] = train_knowledge_encoder(tree, cfg, r2);
        REQUIRE(checkpoint_bytes(p1) == checkpoint_bytes(p2));
    }
    SECTION("triplet baseline runs and is labeled") {
        TrainConfig tcfg = cfg;
        tcfg.metric = MetricLoss::Triplet;
        tcfg.epochs = 4;
        Rng rng(tcfg.seed);
        auto [params, hist] = train_knowledge_encoder(tree, tcfg, rng);
        REQUIRE(hist.loss_label == "triplet");
        REQUIRE(hist.steps.size() == tcfg.epochs * tcfg.steps_per_epoch);
    }
    SECTION("too-small tree is an error") {
        TrainConfig big = cfg;
        big.entities_per_batch = 64;
        Rng rng(1);
        REQUIRE_THROWS_AS(train_knowledge_encoder(tree, big, rng), DataError);
    }
}

TEST_CASE("train_kep") {
    const SynthSpec spec = tiny_spec();
    const KnowledgeTree tree = tiny_tree();
    const std::vector<PairRecord> pairs = gen_pairs(spec, tree);

    TrainConfig ke_cfg = tiny_ke_config();
    ke_cfg.epochs = 8;
    Rng ke_rng(ke_cfg.seed);
    auto [phi_k, ke_hist] = train_knowledge_encoder(tree, ke_cfg, ke_rng);

    const TrainConfig cfg = tiny_kep_config();

    SECTION("image-text loss decreases") {
        Rng rng(cfg.seed);
        const KepResult r = train_kep(pairs, spec.latent_dim, phi_k, cfg, rng);
        REQUIRE(r.history.steps.back().l_vt < r.history.steps.front().l_vt);
    }
    SECTION("loss bookkeeping: total = l_vt + alpha * l_tk at every step") {
        Rng rng(cfg.seed);
        const KepResult r = train_kep(pairs, spec.latent_dim, phi_k, cfg, rng);
        for (const StepRecord& s : r.history.steps)
            REQUIRE(std::abs(s.loss - (s.l_vt + cfg.alpha * s.l_tk)) < 1e-12);
    }
    SECTION("step 0 distillation loss equals info_nce of the knowledge embeddings with themselves") {
        TrainConfig one = cfg;
        one.epochs = 1;
        Rng rng(one.seed);
        const KepResult r = train_kep(pairs, spec.latent_dim, phi_k, one, rng);

        // rebuild the first batch: same shuffle from the same seed state
        Rng replay(one.seed);
        init_image_encoder(spec.latent_dim, one.projection_head, replay);
        std::vector<std::size_t> order(pairs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        replay.shuffle(order);
        std::vector<std::string> captions;
        for (std::size_t b = 0; b < one.pair_batch; ++b) captions.push_back(pairs[order[b]].caption);
        const Tokenizer tok{phi_k.vocab};
        const Tensor2 know = encode_text_batch(phi_k, tok, captions);
        const double expected = info_nce(know, know, one.tau).loss;
        REQUIRE(r.history.steps.front().l_tk == Catch::Approx(expected).margin(1e-12));
    }
    SECTION("frozen branch is byte-identical after training") {
        const std::string before = checkpoint_bytes(phi_k);
        Rng rng(cfg.seed);
        const KepResult r = train_kep(pairs, spec.latent_dim, phi_k, cfg, rng);
        REQUIRE(checkpoint_bytes(phi_k) == before);
    }
    SECTION("distillation off equals alpha zero, bitwise") {
        TrainConfig off = cfg;
        off.distillation = false;
        TrainConfig zero = cfg;
        zero.alpha = 0.0;
        Rng r1(cfg.seed), r2(cfg.seed);
        const KepResult a = train_kep(pairs, spec.latent_dim, phi_k, off, r1);
        const KepResult b = train_kep(pairs, spec.latent_dim, phi_k, zero, r2);
        REQUIRE(checkpoint_bytes(a.phi_t) == checkpoint_bytes(b.phi_t));
        REQUIRE(a.phi_v == b.phi_v);
    }
    SECTION("projection head off removes head parameters") {
        TrainConfig no_head = cfg;
        no_head.projection_head = false;
        no_head.epochs = 2;
        Rng rng(cfg.seed);
        const KepResult r = train_kep(pairs, spec.latent_dim, phi_k, no_head, rng);
        REQUIRE_FALSE(r.phi_v.head_enabled);
        REQUIRE(r.phi_v.head_w.size() == 0);
    }
    SECTION("batch larger than the dataset is an error") {
        TrainConfig big = cfg;
        big.pair_batch = pairs.size() + 1;
        Rng rng(1);
        REQUIRE_THROWS_AS(train_kep(pairs, spec.latent_dim, phi_k, big, rng), DataError);
    }
}

TEST_CASE("history file excludes wall-clock and is reproducible") {
    const KnowledgeTree tree = tiny_tree();
    TrainConfig cfg = tiny_ke_config();
    cfg.epochs = 3;
    Rng rng(cfg.seed);
    auto [params, hist] = train_knowledge_encoder(tree, cfg, rng);
    REQUIRE(hist.wall_seconds > 0.0);

    const auto path = std::filesystem::temp_directory_path() / "pathalign_hist_test.jsonl";
    write_history(hist, path.string());
    std::ifstream in(path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        REQUIRE(line.find("wall") == std::string::npos);
        ++lines;
    }
    REQUIRE(lines == hist.steps.size() + 1);
    std::filesystem::remove(path);
}
