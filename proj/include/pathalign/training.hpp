#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pathalign/encoders.hpp"
#include "pathalign/errors.hpp"
#include "pathalign/knowledge_tree.hpp"
#include "pathalign/objectives.hpp"
#include "pathalign/records.hpp"
#include "pathalign/rng.hpp"

namespace pathalign {

enum class MetricLoss { AdaSP, Triplet };

inline const char* metric_loss_name(MetricLoss m) {
    return m == MetricLoss::AdaSP ? "adasp" : "triplet";
}

inline MetricLoss metric_loss_from_name(const std::string& s) {
    if (s == "adasp") return MetricLoss::AdaSP;
    if (s == "triplet") return MetricLoss::Triplet;
    throw DataError("unknown metric loss: " + s + " (expected adasp or triplet)");
}

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t epochs = 200;
    std::size_t steps_per_epoch = 0;   // 0 = one pass: ceil(nodes / n)
    std::size_t entities_per_batch = 32;   // n
    std::size_t instances_per_entity = 8;  // k
    std::size_t pair_batch = 256;
    double lr = 1e-2;  // toy-scale default; full-scale runs use far smaller rates
    double momentum = 0.9;
    double tau = 0.04;
    double alpha = 0.3;
    double margin = 0.3;
    bool projection_head = true;
    bool distillation = true;
    MetricLoss metric = MetricLoss::AdaSP;
    std::size_t hidden = kDefaultHidden;
    std::size_t vocab = kDefaultVocab;

    void validate() const {
        if (!(lr > 0.0)) throw DataError("config: lr must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw DataError("config: momentum must be in [0,1)");
        if (!(tau > 0.0)) throw DataError("config: tau must be positive");
        if (alpha < 0.0) throw DataError("config: alpha must be non-negative");
        if (entities_per_batch < 2 || instances_per_entity < 2)
            throw DataError("config: batch shape needs n >= 2 and k >= 2");
        if (pair_batch < 1) throw DataError("config: pair_batch must be positive");
        if (epochs < 1) throw DataError("config: epochs must be positive");
        if (vocab < 1 || hidden < 1) throw DataError("config: vocab and hidden must be positive");
    }
};

inline json config_to_json(const TrainConfig& c) {
    return {{"seed", c.seed},
            {"epochs", c.epochs},
            {"steps_per_epoch", c.steps_per_epoch},
            {"entities_per_batch", c.entities_per_batch},
            {"instances_per_entity", c.instances_per_entity},
            {"pair_batch", c.pair_batch},
            {"lr", c.lr},
            {"momentum", c.momentum},
            {"tau", c.tau},
            {"alpha", c.alpha},
            {"margin", c.margin},
            {"projection_head", c.projection_head},
            {"distillation", c.distillation},
            {"metric", metric_loss_name(c.metric)},
            {"hidden", c.hidden},
            {"vocab", c.vocab}};
}

// Keys present in the JSON override the current values; everything else keeps
// its default.
inline void apply_config_json(TrainConfig& c, const json& j) {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("steps_per_epoch")) c.steps_per_epoch = j["steps_per_epoch"].get<std::size_t>();
    if (j.contains("entities_per_batch")) c.entities_per_batch = j["entities_per_batch"].get<std::size_t>();
    if (j.contains("instances_per_entity"))
        c.instances_per_entity = j["instances_per_entity"].get<std::size_t>();
    if (j.contains("pair_batch")) c.pair_batch = j["pair_batch"].get<std::size_t>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("margin")) c.margin = j["margin"].get<double>();
    if (j.contains("projection_head")) c.projection_head = j["projection_head"].get<bool>();
    if (j.contains("distillation")) c.distillation = j["distillation"].get<bool>();
    if (j.contains("metric")) c.metric = metric_loss_from_name(j["metric"].get<std::string>());
    if (j.contains("hidden")) c.hidden = j["hidden"].get<std::size_t>();
    if (j.contains("vocab")) c.vocab = j["vocab"].get<std::size_t>();
}

struct StepRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double l_vt = 0.0;
    double l_tk = 0.0;
};

struct RunHistory {
    std::uint64_t seed = 0;
    json config_echo;
    std::string loss_label;
    std::vector<StepRecord> steps;
    double wall_seconds = 0.0;  // reported on stderr, never serialized
};

// JSON Lines: one header line, then one line per optimizer step. Wall-clock
// stays out of the file so reruns with the same seed are byte-identical.
inline void write_history(const RunHistory& h, const std::string& path) {
    std::ofstream out = detail::open_for_write(path);
    out << json{{"seed", h.seed}, {"config", h.config_echo}, {"loss", h.loss_label}}.dump() << '\n';
    for (const StepRecord& s : h.steps) {
        if (h.loss_label == "kep")
            out << json{{"step", s.step}, {"total", s.loss}, {"l_vt", s.l_vt}, {"l_tk", s.l_tk}}.dump()
                << '\n';
        else
            out << json{{"step", s.step}, {"loss", s.loss}}.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

struct SgdState {
    std::map<std::string, Tensor2> velocity;
};

// velocity = momentum * velocity + grad; param -= lr * velocity
inline void sgd_step(const std::vector<std::pair<std::string, Tensor2*>>& params,
                     const std::vector<Tensor2>& grads, double lr, double momentum,
                     SgdState& state) {
    if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, p] = params[i];
        const Tensor2& g = grads[i];
        if (!p->same_shape(g)) throw std::invalid_argument("sgd_step: shape mismatch for " + name);
        for (double v : g.values)
            if (!std::isfinite(v))
                throw NumericError("non-finite gradient in parameter \"" + name + "\"");
        Tensor2& vel = state.velocity.try_emplace(name, Tensor2(g.rows, g.cols)).first->second;
        for (std::size_t j = 0; j < g.size(); ++j) {
            vel.values[j] = momentum * vel.values[j] + g.values[j];
            p->values[j] -= lr * vel.values[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Stage 1: knowledge encoder pretraining on entity-balanced batches
// ---------------------------------------------------------------------------

inline std::pair<TextEncoderParams, RunHistory> train_knowledge_encoder(const KnowledgeTree& tree,
                                                                        const TrainConfig& cfg,
                                                                        Rng& rng) {
    cfg.validate();
    const std::size_t n = cfg.entities_per_batch, k = cfg.instances_per_entity;
    if (tree.nodes.size() < n)
        throw DataError("train ke: tree has " + std::to_string(tree.nodes.size()) +
                        " nodes, batches need " + std::to_string(n));

    const auto t0 = std::chrono::steady_clock::now();
    Tokenizer tok{cfg.vocab};
    TextEncoderParams params = init_text_encoder(cfg.vocab, cfg.hidden, rng);
    SgdState sgd;
    RunHistory hist;
    hist.seed = cfg.seed;
    hist.config_echo = config_to_json(cfg);
    hist.loss_label = metric_loss_name(cfg.metric);

    const std::size_t steps_per_epoch =
        cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (tree.nodes.size() + n - 1) / n;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            KnowledgeBatch batch = sample_entity_batch(tree, rng, n, k);
            TextForward f = text_forward(params, tok, batch.texts, /*trainable=*/true);
            EmbeddingBatch emb{n, k, f.graph.value(f.out)};
            const LossGrad lg = cfg.metric == MetricLoss::AdaSP
                                    ? adasp_loss(emb, cfg.tau)
                                    : triplet_batchhard_loss(emb, cfg.margin);
            if (!std::isfinite(lg.loss)) throw NumericError("train ke: non-finite loss");
            f.graph.backward(f.out, lg.grad);
            sgd_step({{"embed", &params.embed},
                      {"w1", &params.w1},
                      {"b1", &params.b1},
                      {"w2", &params.w2},
                      {"b2", &params.b2}},
                     {f.graph.grad(f.embed), f.graph.grad(f.w1), f.graph.grad(f.b1),
                      f.graph.grad(f.w2), f.graph.grad(f.b2)},
                     cfg.lr, cfg.momentum, sgd);
            hist.steps.push_back({step, lg.loss, 0.0, 0.0});
        }
    }
    hist.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(params), std::move(hist)};
}

// ---------------------------------------------------------------------------
// Stage 2: image-text alignment with the frozen knowledge branch
// ---------------------------------------------------------------------------

struct KepResult {
    ImageEncoderParams phi_v;
    TextEncoderParams phi_t;
    RunHistory history;
};

inline KepResult train_kep(const std::vector<PairRecord>& pairs, std::size_t d_img,
                           const TextEncoderParams& phi_k, const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    if (pairs.empty()) throw DataError("train kep: no pairs");
    if (pairs.size() < cfg.pair_batch)
        throw DataError("train kep: pair_batch " + std::to_string(cfg.pair_batch) +
                        " exceeds dataset size " + std::to_string(pairs.size()) +
                        " (full batches are required)");

    const auto t0 = std::chrono::steady_clock::now();
    Tokenizer tok{phi_k.vocab};
    TextEncoderParams phi_t = clone_params(phi_k);
    const FrozenTextEncoder frozen = freeze(clone_params(phi_k));
    ImageEncoderParams phi_v = init_image_encoder(d_img, cfg.projection_head, rng);
    SgdState sgd;
    RunHistory hist;
    hist.seed = cfg.seed;
    hist.config_echo = config_to_json(cfg);
    hist.loss_label = "kep";

    LossConfig loss_cfg{cfg.tau, cfg.distillation ? cfg.alpha : 0.0, cfg.margin};
    const std::size_t batch = cfg.pair_batch;
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start + batch <= order.size(); start += batch, ++step) {
            Tensor2 features(batch, d_img);
            std::vector<std::string> captions(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                const PairRecord& p = pairs[order[start + b]];
                std::copy(p.image_features.begin(), p.image_features.end(),
                          features.row(b).begin());
                captions[b] = p.caption;
            }

            ImageForward fv = image_forward(phi_v, features, /*trainable=*/true);
            TextForward ft = text_forward(phi_t, tok, captions, /*trainable=*/true);

            double l_vt = 0.0, l_tk = 0.0, total = 0.0;
            Tensor2 grad_v, grad_t;
            if (cfg.distillation) {
                const Tensor2 knowledge = encode_text_batch(frozen.params(), tok, captions);
                const KepLossResult r = kep_loss(
                    {fv.graph.value(fv.out), ft.graph.value(ft.out), knowledge}, loss_cfg);
                l_vt = r.l_vt;
                l_tk = r.l_tk;
                total = r.total;
                grad_v = r.grad_v;
                grad_t = r.grad_t;
            } else {
                const InfoNceResult r =
                    info_nce(fv.graph.value(fv.out), ft.graph.value(ft.out), cfg.tau);
                l_vt = r.loss;
                total = r.loss;
                grad_v = r.grad_a;
                grad_t = r.grad_b;
            }
            if (!std::isfinite(total)) throw NumericError("train kep: non-finite loss");

            fv.graph.backward(fv.out, grad_v);
            ft.graph.backward(ft.out, grad_t);

            std::vector<std::pair<std::string, Tensor2*>> params = {
                {"phi_v.trunk_w", &phi_v.trunk_w}, {"phi_v.trunk_b", &phi_v.trunk_b}};
            std::vector<Tensor2> grads = {fv.graph.grad(fv.trunk_w), fv.graph.grad(fv.trunk_b)};
            if (phi_v.head_enabled) {
                params.push_back({"phi_v.head_w", &phi_v.head_w});
                params.push_back({"phi_v.head_b", &phi_v.head_b});
                grads.push_back(fv.graph.grad(fv.head_w));
                grads.push_back(fv.graph.grad(fv.head_b));
            }
            params.push_back({"phi_t.embed", &phi_t.embed});
            params.push_back({"phi_t.w1", &phi_t.w1});
            params.push_back({"phi_t.b1", &phi_t.b1});
            params.push_back({"phi_t.w2", &phi_t.w2});
            params.push_back({"phi_t.b2", &phi_t.b2});
            grads.push_back(ft.graph.grad(ft.embed));
            grads.push_back(ft.graph.grad(ft.w1));
            grads.push_back(ft.graph.grad(ft.b1));
            grads.push_back(ft.graph.grad(ft.w2));
            grads.push_back(ft.graph.grad(ft.b2));
            sgd_step(params, grads, cfg.lr, cfg.momentum, sgd);

            hist.steps.push_back({step, total, l_vt, l_tk});
        }
    }
    hist.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(phi_v), std::move(phi_t), std::move(hist)};
}

}  // namespace pathalign
