#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pathalign/autodiff.hpp"
#include "pathalign/errors.hpp"
#include "pathalign/io.hpp"
#include "pathalign/rng.hpp"
#include "pathalign/tensor.hpp"

namespace pathalign {

inline constexpr std::size_t kEmbeddingDim = 512;
inline constexpr std::size_t kDefaultVocab = 4096;
inline constexpr std::size_t kDefaultHidden = 64;

// Hashed token bag. Tokens are maximal lowercase alphanumeric runs; ids are
// 64-bit FNV-1a of the token bytes modulo the bucket count, so the mapping is
// identical on every platform.
struct Tokenizer {
    std::size_t bucket_count = kDefaultVocab;

    static std::uint64_t fnv1a64(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::vector<std::size_t> tokenize(std::string_view text) const {
        std::vector<std::size_t> ids;
        std::string token;
        auto flush = [&] {
            if (!token.empty()) {
                ids.push_back(static_cast<std::size_t>(fnv1a64(token) % bucket_count));
                token.clear();
            }
        };
        for (char raw : text) {
            const unsigned char c = static_cast<unsigned char>(raw);
            if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
                token.push_back(static_cast<char>(c));
            } else if (c >= 'A' && c <= 'Z') {
                token.push_back(static_cast<char>(c - 'A' + 'a'));
            } else {
                flush();
            }
        }
        flush();
        return ids;
    }
};

// Text encoder: token-bag mean pooling, one tanh layer, linear head, l2
// normalization. Stands in for the knowledge/text encoders Phi_k and Phi_t.
struct TextEncoderParams {
    std::size_t vocab = kDefaultVocab;
    std::size_t hidden = kDefaultHidden;
    Tensor2 embed;  // vocab x hidden
    Tensor2 w1;     // hidden x hidden
    Tensor2 b1;     // 1 x hidden
    Tensor2 w2;     // hidden x 512
    Tensor2 b2;     // 1 x 512

    bool operator==(const TextEncoderParams&) const = default;
};

// Image-feature encoder: linear trunk plus an optional projection head that
// bridges a non-matching feature space, then l2 normalization.
struct ImageEncoderParams {
    std::size_t in_dim = 0;
    bool head_enabled = true;
    Tensor2 trunk_w;  // in_dim x 512
    Tensor2 trunk_b;  // 1 x 512
    Tensor2 head_w;   // 512 x 512 (present only when head_enabled)
    Tensor2 head_b;   // 1 x 512

    bool operator==(const ImageEncoderParams&) const = default;
};

namespace detail {

inline void fill_uniform(Tensor2& t, double bound, Rng& rng) {
    for (double& v : t.values) v = rng.uniform_in(-bound, bound);
}

}  // namespace detail

// All tensors uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], drawn in a fixed
// order from the run seed.
inline TextEncoderParams init_text_encoder(std::size_t vocab, std::size_t hidden, Rng& rng) {
    TextEncoderParams p;
    p.vocab = vocab;
    p.hidden = hidden;
    p.embed = Tensor2(vocab, hidden);
    p.w1 = Tensor2(hidden, hidden);
    p.b1 = Tensor2(1, hidden);
    p.w2 = Tensor2(hidden, kEmbeddingDim);
    p.b2 = Tensor2(1, kEmbeddingDim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    detail::fill_uniform(p.embed, bound, rng);
    detail::fill_uniform(p.w1, bound, rng);
    detail::fill_uniform(p.b1, bound, rng);
    detail::fill_uniform(p.w2, bound, rng);
    detail::fill_uniform(p.b2, bound, rng);
    return p;
}

inline ImageEncoderParams init_image_encoder(std::size_t in_dim, bool head_enabled, Rng& rng) {
    ImageEncoderParams p;
    p.in_dim = in_dim;
    p.head_enabled = head_enabled;
    p.trunk_w = Tensor2(in_dim, kEmbeddingDim);
    p.trunk_b = Tensor2(1, kEmbeddingDim);
    const double trunk_bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    detail::fill_uniform(p.trunk_w, trunk_bound, rng);
    detail::fill_uniform(p.trunk_b, trunk_bound, rng);
    if (head_enabled) {
        p.head_w = Tensor2(kEmbeddingDim, kEmbeddingDim);
        p.head_b = Tensor2(1, kEmbeddingDim);
        const double head_bound = 1.0 / std::sqrt(static_cast<double>(kEmbeddingDim));
        detail::fill_uniform(p.head_w, head_bound, rng);
        detail::fill_uniform(p.head_b, head_bound, rng);
    }
    return p;
}

inline TextEncoderParams clone_params(const TextEncoderParams& p) { return p; }
inline ImageEncoderParams clone_params(const ImageEncoderParams& p) { return p; }

// Immutability marker for the distillation branch: const access only, so the
// wrapped parameters cannot receive updates.
class FrozenTextEncoder {
public:
    explicit FrozenTextEncoder(TextEncoderParams p) : params_(std::move(p)) {}
    const TextEncoderParams& params() const { return params_; }

private:
    TextEncoderParams params_;
};

inline FrozenTextEncoder freeze(TextEncoderParams p) { return FrozenTextEncoder(std::move(p)); }

// ---------------------------------------------------------------------------
// Forward passes. Training and evaluation share one code path (a tape built
// per batch) so values are bitwise identical in both modes.
// ---------------------------------------------------------------------------

struct TextForward {
    Graph graph;
    Graph::NodeId out = 0;  // m x 512, unit rows
    Graph::NodeId embed = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

inline TextForward text_forward(const TextEncoderParams& p, const Tokenizer& tok,
                                std::span<const std::string> texts, bool trainable) {
    std::vector<std::size_t> all_ids;
    std::vector<std::size_t> offsets{0};
    for (const std::string& t : texts) {
        std::vector<std::size_t> ids = tok.tokenize(t);
        if (ids.empty()) throw DataError("empty text: \"" + t + "\" yields no tokens");
        all_ids.insert(all_ids.end(), ids.begin(), ids.end());
        offsets.push_back(all_ids.size());
    }
    TextForward f;
    f.embed = f.graph.leaf(p.embed, trainable);
    f.w1 = f.graph.leaf(p.w1, trainable);
    f.b1 = f.graph.leaf(p.b1, trainable);
    f.w2 = f.graph.leaf(p.w2, trainable);
    f.b2 = f.graph.leaf(p.b2, trainable);
    const auto gathered = f.graph.gather_rows(f.embed, std::move(all_ids));
    const auto pooled = f.graph.group_mean_rows(gathered, std::move(offsets));
    const auto h1 = f.graph.tanh(f.graph.add_rowvec(f.graph.matmul(pooled, f.w1), f.b1));
    const auto h2 = f.graph.add_rowvec(f.graph.matmul(h1, f.w2), f.b2);
    f.out = f.graph.l2_normalize_rows(h2);
    return f;
}

inline Tensor2 encode_text_batch(const TextEncoderParams& p, const Tokenizer& tok,
                                 std::span<const std::string> texts) {
    TextForward f = text_forward(p, tok, texts, /*trainable=*/false);
    return f.graph.value(f.out);
}

inline std::vector<double> encode_text(const TextEncoderParams& p, const Tokenizer& tok,
                                       const std::string& text) {
    const Tensor2 out = encode_text_batch(p, tok, std::span<const std::string>(&text, 1));
    return {out.values.begin(), out.values.end()};
}

struct ImageForward {
    Graph graph;
    Graph::NodeId out = 0;  // m x 512, unit rows
    Graph::NodeId trunk_w = 0, trunk_b = 0, head_w = 0, head_b = 0;
    bool head_enabled = false;
};

inline ImageForward image_forward(const ImageEncoderParams& p, const Tensor2& features,
                                  bool trainable) {
    if (features.cols != p.in_dim)
        throw DataError("image feature dimension mismatch: got " + std::to_string(features.cols) +
                        ", encoder expects " + std::to_string(p.in_dim));
    ImageForward f;
    f.head_enabled = p.head_enabled;
    const auto x = f.graph.leaf(features, false);
    f.trunk_w = f.graph.leaf(p.trunk_w, trainable);
    f.trunk_b = f.graph.leaf(p.trunk_b, trainable);
    auto h = f.graph.add_rowvec(f.graph.matmul(x, f.trunk_w), f.trunk_b);
    if (p.head_enabled) {
        f.head_w = f.graph.leaf(p.head_w, trainable);
        f.head_b = f.graph.leaf(p.head_b, trainable);
        h = f.graph.add_rowvec(f.graph.matmul(h, f.head_w), f.head_b);
    }
    f.out = f.graph.l2_normalize_rows(h);
    return f;
}

inline Tensor2 encode_image_batch(const ImageEncoderParams& p, const Tensor2& features) {
    ImageForward f = image_forward(p, features, /*trainable=*/false);
    return f.graph.value(f.out);
}

inline std::vector<double> encode_image(const ImageEncoderParams& p,
                                        std::span<const double> features) {
    Tensor2 x(1, features.size());
    std::copy(features.begin(), features.end(), x.values.begin());
    const Tensor2 out = encode_image_batch(p, x);
    return {out.values.begin(), out.values.end()};
}

// ---------------------------------------------------------------------------
// Checkpoint adapters
// ---------------------------------------------------------------------------

inline std::vector<NamedTensor> text_encoder_arrays(const TextEncoderParams& p) {
    return {{"embed", p.embed}, {"w1", p.w1}, {"b1", p.b1}, {"w2", p.w2}, {"b2", p.b2}};
}

inline json text_encoder_meta(const TextEncoderParams& p) {
    return {{"kind", "text_encoder"},
            {"vocab", p.vocab},
            {"hidden", p.hidden},
            {"embedding_dim", kEmbeddingDim}};
}

inline TextEncoderParams text_encoder_from_checkpoint(const Checkpoint& ckpt,
                                                      const std::string& path) {
    if (ckpt.meta.value("kind", std::string{}) != "text_encoder")
        throw DataError(path + ": checkpoint is not a text encoder");
    TextEncoderParams p;
    p.vocab = ckpt.meta.at("vocab").get<std::size_t>();
    p.hidden = ckpt.meta.at("hidden").get<std::size_t>();
    for (const NamedTensor& a : ckpt.arrays) {
        if (a.name == "embed") p.embed = a.tensor;
        else if (a.name == "w1") p.w1 = a.tensor;
        else if (a.name == "b1") p.b1 = a.tensor;
        else if (a.name == "w2") p.w2 = a.tensor;
        else if (a.name == "b2") p.b2 = a.tensor;
        else throw DataError(path + ": unexpected array \"" + a.name + "\"");
    }
    if (p.embed.rows != p.vocab || p.w2.cols != kEmbeddingDim)
        throw DataError(path + ": array shapes disagree with header dims");
    return p;
}

inline std::vector<NamedTensor> image_encoder_arrays(const ImageEncoderParams& p) {
    std::vector<NamedTensor> out = {{"trunk_w", p.trunk_w}, {"trunk_b", p.trunk_b}};
    if (p.head_enabled) {
        out.push_back({"head_w", p.head_w});
        out.push_back({"head_b", p.head_b});
    }
    return out;
}

inline json image_encoder_meta(const ImageEncoderParams& p) {
    return {{"kind", "image_encoder"},
            {"in_dim", p.in_dim},
            {"head_enabled", p.head_enabled},
            {"embedding_dim", kEmbeddingDim}};
}

inline ImageEncoderParams image_encoder_from_checkpoint(const Checkpoint& ckpt,
                                                        const std::string& path) {
    if (ckpt.meta.value("kind", std::string{}) != "image_encoder")
        throw DataError(path + ": checkpoint is not an image encoder");
    ImageEncoderParams p;
    p.in_dim = ckpt.meta.at("in_dim").get<std::size_t>();
    p.head_enabled = ckpt.meta.at("head_enabled").get<bool>();
    for (const NamedTensor& a : ckpt.arrays) {
        if (a.name == "trunk_w") p.trunk_w = a.tensor;
        else if (a.name == "trunk_b") p.trunk_b = a.tensor;
        else if (a.name == "head_w") p.head_w = a.tensor;
        else if (a.name == "head_b") p.head_b = a.tensor;
        else throw DataError(path + ": unexpected array \"" + a.name + "\"");
    }
    return p;
}

}  // namespace pathalign
