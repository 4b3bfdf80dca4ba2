#pragma once

// Shared-parameter encoder-decoder transformer.  One stack of pre-norm
// residual layers serves both roles when sharing is on; the decoder pass adds
// causal masking, cross-attention onto the encoded memory, and a learned
// per-layer "from the encoder" signal bias on cross-attention key/value
// inputs.  With sharing off, encoder and decoder own separate stacks (the
// decoder still reuses one attention weight set for self- and cross-attention)
// and the signal biases do not exist.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xgpt/ops.hpp"
#include "xgpt/representation.hpp"
#include "xgpt/rng.hpp"
#include "xgpt/tensor.hpp"
#include "xgpt/vocab.hpp"

namespace xgpt {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t width = 64;
    std::size_t heads = 8;
    std::size_t vocab = 19;
    std::size_t d_feat = 10;
    std::size_t max_positions = 128;
    std::size_t max_regions = kMaxRegions;
    double dropout = 0.1;
    bool share = true;

    std::size_t head_dim() const { return width / heads; }

    void validate() const {
        if (layers == 0) throw std::invalid_argument("ModelConfig: layers must be >= 1");
        if (width == 0 || heads == 0 || width % heads != 0) {
            throw std::invalid_argument("ModelConfig: width " + std::to_string(width) +
                                        " must be a positive multiple of heads " +
                                        std::to_string(heads));
        }
        if (vocab <= static_cast<std::size_t>(kNumReserved)) {
            throw std::invalid_argument("ModelConfig: vocabulary of " + std::to_string(vocab) +
                                        " leaves no word tokens");
        }
        if (d_feat == 0) throw std::invalid_argument("ModelConfig: d_feat must be positive");
        if (max_positions == 0) throw std::invalid_argument("ModelConfig: max_positions must be positive");
        if (max_regions == 0) throw std::invalid_argument("ModelConfig: max_regions must be positive");
        if (dropout < 0.0 || dropout >= 1.0) {
            throw std::invalid_argument("ModelConfig: dropout must lie in [0, 1)");
        }
    }
};

enum class InitKind { zeros, ones, normal };

template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Shape shape, InitKind kind) {
        auto [it, inserted] = params_.emplace(name, Tensor<T>::zeros(std::move(shape), true));
        if (!inserted) throw std::logic_error("ParamStore: duplicate parameter '" + name + "'");
        init_kinds_[name] = kind;
        return it->second;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    std::map<std::string, Tensor<T>>& entries() { return params_; }
    const std::map<std::string, Tensor<T>>& entries() const { return params_; }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }

    // Deterministic: every tensor draws from its own name-keyed stream, so the
    // values do not depend on registry iteration order.
    void init(std::uint64_t seed, double normal_std) {
        for (auto& [name, t] : params_) {
            switch (init_kinds_.at(name)) {
                case InitKind::zeros:
                    std::fill(t.values().begin(), t.values().end(), T(0));
                    break;
                case InitKind::ones:
                    std::fill(t.values().begin(), t.values().end(), T(1));
                    break;
                case InitKind::normal: {
                    RngStream rng(seed, detail::fnv1a64(name), "init");
                    for (auto& v : t.values()) v = static_cast<T>(rng.next_gaussian() * normal_std);
                    break;
                }
            }
        }
    }

private:
    std::map<std::string, Tensor<T>> params_;
    std::map<std::string, InitKind> init_kinds_;
};

template <typename T>
struct AttentionParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct LayerParams {
    AttentionParams<T> attn;
    Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor<T> ln_attn_g, ln_attn_b;
    Tensor<T> ln_cross_g, ln_cross_b;
    Tensor<T> ln_ffn_g, ln_ffn_b;
    Tensor<T> sig_k, sig_v;  // present only in shared mode
    bool has_signal() const { return sig_k.defined(); }
};

template <typename T>
struct AoaParams {
    Tensor<T> wq, wk, wv;
    Tensor<T> w1, w2, w3, w4, b1, b2;
    Tensor<T> ln_g, ln_b;
};

template <typename T>
struct ForwardCtx {
    bool training = false;
    RngStream* rng = nullptr;
};

enum class AttnMode { self_source, from_encoder };

// Mask helpers: row-major [queries x keys], nonzero = attention allowed.
inline std::vector<std::uint8_t> allow_all(std::size_t queries, std::size_t keys) {
    return std::vector<std::uint8_t>(queries * keys, 1);
}

inline std::vector<std::uint8_t> allow_causal(std::size_t len) {
    std::vector<std::uint8_t> m(len * len, 0);
    for (std::size_t q = 0; q < len; ++q)
        for (std::size_t k = 0; k <= q; ++k) m[q * len + k] = 1;
    return m;
}

inline std::vector<std::uint8_t> allow_valid_keys(std::size_t queries,
                                                  const std::vector<std::uint8_t>& key_valid) {
    std::vector<std::uint8_t> m(queries * key_valid.size());
    for (std::size_t q = 0; q < queries; ++q)
        for (std::size_t k = 0; k < key_valid.size(); ++k) m[q * key_valid.size() + k] = key_valid[k];
    return m;
}

// Scaled dot-product attention split into head_count column blocks.
template <typename T>
Tensor<T> multi_head_mix(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         std::size_t head_count, const std::vector<std::uint8_t>& allowed) {
    const std::size_t width = q.extent(1);
    if (width % head_count != 0) {
        throw std::invalid_argument("multi_head_mix: width " + std::to_string(width) +
                                    " not divisible by " + std::to_string(head_count) + " heads");
    }
    const std::size_t dh = width / head_count;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor<T>> mixed;
    mixed.reserve(head_count);
    for (std::size_t h = 0; h < head_count; ++h) {
        Tensor<T> qh = slice_cols(q, h * dh, dh);
        Tensor<T> kh = slice_cols(k, h * dh, dh);
        Tensor<T> vh = slice_cols(v, h * dh, dh);
        Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        Tensor<T> weights = masked_softmax_rows(scores, allowed);
        mixed.push_back(matmul(weights, vh));
    }
    return concat(mixed, 1);
}

template <typename T>
class Model {
public:
    explicit Model(ModelConfig config) : cfg_(std::move(config)) {
        cfg_.validate();
        build();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    void init(std::uint64_t seed, double normal_std = 0.02) { store_.init(seed, normal_std); }

    // ------------------------------------------------------------ embeddings

    // Token plus learned absolute position rows; positions start at
    // `pos_offset` and must fit the position table.
    Tensor<T> embed_tokens(const std::vector<int>& ids, std::size_t pos_offset = 0) {
        if (ids.empty()) throw std::invalid_argument("embed_tokens: empty id list");
        if (pos_offset + ids.size() > cfg_.max_positions) {
            throw std::out_of_range("embed_tokens: positions [" + std::to_string(pos_offset) + ", " +
                                    std::to_string(pos_offset + ids.size()) +
                                    ") exceed position table of " +
                                    std::to_string(cfg_.max_positions));
        }
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(pos_offset + i);
        return add(embedding(token_table_, ids), embedding(pos_table_, positions));
    }

    // Projects [features ; geometry] rows into model width.  No gradient flows
    // into the raw features (they are inputs, not parameters).
    Tensor<T> project_regions(const RegionSet& regions) {
        regions.validate();
        if (regions.d_feat != cfg_.d_feat) {
            throw std::invalid_argument("project_regions: feature width " +
                                        std::to_string(regions.d_feat) + " does not match model d_feat " +
                                        std::to_string(cfg_.d_feat));
        }
        const std::size_t n = regions.count();
        const std::size_t in_dim = cfg_.d_feat + kPositionDim;
        std::vector<T> rows(n * in_dim);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < cfg_.d_feat; ++c)
                rows[r * in_dim + c] = static_cast<T>(regions.features[r * cfg_.d_feat + c]);
            for (std::size_t c = 0; c < kPositionDim; ++c)
                rows[r * in_dim + cfg_.d_feat + c] =
                    static_cast<T>(regions.positions[r * kPositionDim + c]);
        }
        Tensor<T> x = Tensor<T>::from_values({n, in_dim}, std::move(rows));
        return linear(x, region_w_, region_b_);
    }

    // Attention-on-attention refinement:
    //   f = multi-head attention over the rows;
    //   out = LayerNorm(x + sigmoid(W1 Q + W2 f + b1) .* (W3 Q + W4 f + b2)).
    Tensor<T> aoa_refine(const Tensor<T>& x) {
        const std::size_t n = x.extent(0);
        Tensor<T> q = matmul(x, aoa_.wq);
        Tensor<T> k = matmul(x, aoa_.wk);
        Tensor<T> v = matmul(x, aoa_.wv);
        Tensor<T> f = multi_head_mix(q, k, v, cfg_.heads, allow_all(n, n));
        Tensor<T> gate = sigmoid(add_rowvec(add(matmul(q, aoa_.w1), matmul(f, aoa_.w2)), aoa_.b1));
        Tensor<T> content = add_rowvec(add(matmul(q, aoa_.w3), matmul(f, aoa_.w4)), aoa_.b2);
        return layer_norm(add(x, mul(gate, content)), aoa_.ln_g, aoa_.ln_b);
    }

    Tensor<T> refined_regions(const RegionSet& regions) {
        return aoa_refine(project_regions(regions));
    }

    // Encoder rows: regions first, then text, each tagged with its modality
    // segment embedding.
    Tensor<T> assemble_encoder_input(const std::optional<Tensor<T>>& region_rows,
                                     const std::optional<Tensor<T>>& text_rows) {
        std::vector<Tensor<T>> parts;
        if (region_rows) parts.push_back(add_segment(*region_rows, 0));
        if (text_rows) parts.push_back(add_segment(*text_rows, 1));
        if (parts.empty()) throw std::invalid_argument("assemble_encoder_input: no rows given");
        return parts.size() == 1 ? parts[0] : concat(parts, std::size_t(0));
    }

    // ----------------------------------------------------------- attention

    Tensor<T> shared_attention(const Tensor<T>& q_src, const Tensor<T>& kv_src, AttnMode mode,
                               const LayerParams<T>& layer,
                               const std::vector<std::uint8_t>& allowed) {
        Tensor<T> k_in = kv_src;
        Tensor<T> v_in = kv_src;
        if (mode == AttnMode::from_encoder && layer.has_signal()) {
            k_in = add_rowvec(kv_src, layer.sig_k);
            v_in = add_rowvec(kv_src, layer.sig_v);
        }
        Tensor<T> q = linear(q_src, layer.attn.wq, layer.attn.bq);
        Tensor<T> k = linear(k_in, layer.attn.wk, layer.attn.bk);
        Tensor<T> v = linear(v_in, layer.attn.wv, layer.attn.bv);
        Tensor<T> mixed = multi_head_mix(q, k, v, cfg_.heads, allowed);
        return linear(mixed, layer.attn.wo, layer.attn.bo);
    }

    // ------------------------------------------------------------- stacks

    // Pre-norm self-attention stack over assembled rows.  `key_valid` marks
    // padded key rows as unattendable; queries at every row are still computed.
    Tensor<T> encode(const Tensor<T>& input, ForwardCtx<T>& ctx,
                     const std::vector<std::uint8_t>& key_valid = {}) {
        const std::size_t s = input.extent(0);
        if (!key_valid.empty() && key_valid.size() != s) {
            throw std::invalid_argument("encode: key_valid size " + std::to_string(key_valid.size()) +
                                        " does not match " + std::to_string(s) + " rows");
        }
        const auto allowed = key_valid.empty() ? allow_all(s, s) : allow_valid_keys(s, key_valid);
        Tensor<T> x = drop(input, ctx);
        for (auto& layer : enc_layers_) {
            Tensor<T> xn = layer_norm(x, layer.ln_attn_g, layer.ln_attn_b);
            Tensor<T> a = shared_attention(xn, xn, AttnMode::self_source, layer, allowed);
            x = add(x, drop(a, ctx));
            Tensor<T> f = feed_forward(layer_norm(x, layer.ln_ffn_g, layer.ln_ffn_b), layer);
            x = add(x, drop(f, ctx));
        }
        return layer_norm(x, final_ln_g_, final_ln_b_);
    }

    // Decoder pass over already-embedded target rows.  `causal` gates the
    // self-attention mask (the region-generation pass runs non-causal).
    Tensor<T> decode_hidden(const Tensor<T>& target_rows, const Tensor<T>& memory, bool causal,
                            ForwardCtx<T>& ctx,
                            const std::vector<std::uint8_t>& memory_valid = {}) {
        const std::size_t t = target_rows.extent(0);
        const std::size_t s = memory.extent(0);
        if (!memory_valid.empty() && memory_valid.size() != s) {
            throw std::invalid_argument("decode_hidden: memory_valid size " +
                                        std::to_string(memory_valid.size()) + " does not match " +
                                        std::to_string(s) + " memory rows");
        }
        const auto self_allowed = causal ? allow_causal(t) : allow_all(t, t);
        const auto cross_allowed =
            memory_valid.empty() ? allow_all(t, s) : allow_valid_keys(t, memory_valid);
        Tensor<T> y = drop(target_rows, ctx);
        for (auto& layer : dec_layers_) {
            Tensor<T> self_in = layer_norm(y, layer.ln_attn_g, layer.ln_attn_b);
            Tensor<T> a = shared_attention(self_in, self_in, AttnMode::self_source, layer, self_allowed);
            y = add(y, drop(a, ctx));
            Tensor<T> cross_in = layer_norm(y, layer.ln_cross_g, layer.ln_cross_b);
            Tensor<T> c = shared_attention(cross_in, memory, AttnMode::from_encoder, layer, cross_allowed);
            y = add(y, drop(c, ctx));
            Tensor<T> f = feed_forward(layer_norm(y, layer.ln_ffn_g, layer.ln_ffn_b), layer);
            y = add(y, drop(f, ctx));
        }
        return layer_norm(y, final_ln_g_, final_ln_b_);
    }

    // Weight-tied head: logits = hidden * token_table^T.
    Tensor<T> lm_logits(const Tensor<T>& hidden) {
        return matmul(hidden, transpose(token_table_));
    }

    // Teacher-forced next-token logits for a decoder input id stream.
    Tensor<T> decode(const std::vector<int>& target_in_ids, const Tensor<T>& memory,
                     ForwardCtx<T>& ctx, const std::vector<std::uint8_t>& memory_valid = {}) {
        return lm_logits(decode_hidden(embed_tokens(target_in_ids), memory, true, ctx, memory_valid));
    }

    // Learned region-query rows 0..n-1 for the region-generation decoder pass.
    Tensor<T> tifg_queries(std::size_t n) {
        if (n == 0) throw std::invalid_argument("tifg_queries: need at least one query");
        if (n > cfg_.max_regions) {
            throw std::out_of_range("tifg_queries: " + std::to_string(n) +
                                    " queries exceed table of " + std::to_string(cfg_.max_regions));
        }
        std::vector<int> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
        return embedding(tifg_query_, ids);
    }

    Tensor<T> tifg_head(const Tensor<T>& hidden) { return linear(hidden, tifg_w_, tifg_b_); }

    Tensor<T>& alignment_weight() { return align_w_; }

    // --------------------------------------------------------- bookkeeping

    std::vector<std::pair<std::string, std::size_t>> count_parameters() const {
        std::vector<std::pair<std::string, std::size_t>> out;
        for (const auto& [name, t] : store_.entries()) out.emplace_back(name, t.size());
        return out;
    }

    std::size_t total_parameters() const { return store_.total_size(); }

private:
    Tensor<T> add_segment(const Tensor<T>& rows, int segment) {
        std::vector<int> ids(rows.extent(0), segment);
        return add(rows, embedding(seg_table_, ids));
    }

    Tensor<T> drop(const Tensor<T>& x, ForwardCtx<T>& ctx) {
        return dropout(x, cfg_.dropout, ctx.training, ctx.rng);
    }

    Tensor<T> feed_forward(const Tensor<T>& x, const LayerParams<T>& layer) {
        return linear(gelu(linear(x, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2);
    }

    void build() {
        const std::size_t h = cfg_.width;
        token_table_ = store_.add("embed.token", {cfg_.vocab, h}, InitKind::normal);
        pos_table_ = store_.add("embed.pos", {cfg_.max_positions, h}, InitKind::normal);
        seg_table_ = store_.add("embed.seg", {2, h}, InitKind::normal);
        region_w_ = store_.add("region.proj.w", {cfg_.d_feat + kPositionDim, h}, InitKind::normal);
        region_b_ = store_.add("region.proj.b", {h}, InitKind::zeros);

        aoa_.wq = store_.add("aoa.wq", {h, h}, InitKind::normal);
        aoa_.wk = store_.add("aoa.wk", {h, h}, InitKind::normal);
        aoa_.wv = store_.add("aoa.wv", {h, h}, InitKind::normal);
        aoa_.w1 = store_.add("aoa.w1", {h, h}, InitKind::normal);
        aoa_.w2 = store_.add("aoa.w2", {h, h}, InitKind::normal);
        aoa_.w3 = store_.add("aoa.w3", {h, h}, InitKind::normal);
        aoa_.w4 = store_.add("aoa.w4", {h, h}, InitKind::normal);
        aoa_.b1 = store_.add("aoa.b1", {h}, InitKind::zeros);
        aoa_.b2 = store_.add("aoa.b2", {h}, InitKind::zeros);
        aoa_.ln_g = store_.add("aoa.ln.g", {h}, InitKind::ones);
        aoa_.ln_b = store_.add("aoa.ln.b", {h}, InitKind::zeros);

        if (cfg_.share) {
            enc_layers_ = build_stack("stack", true);
            dec_layers_ = enc_layers_;
        } else {
            enc_layers_ = build_stack("enc", false);
            dec_layers_ = build_stack("dec", false);
        }

        final_ln_g_ = store_.add("final_ln.g", {h}, InitKind::ones);
        final_ln_b_ = store_.add("final_ln.b", {h}, InitKind::zeros);

        tifg_w_ = store_.add("tifg.head.w", {h, h}, InitKind::normal);
        tifg_b_ = store_.add("tifg.head.b", {h}, InitKind::zeros);
        tifg_query_ = store_.add("tifg.query", {cfg_.max_regions, h}, InitKind::normal);
        align_w_ = store_.add("align.w", {3 * h}, InitKind::zeros);
    }

    std::vector<LayerParams<T>> build_stack(const std::string& prefix, bool with_signal) {
        const std::size_t h = cfg_.width;
        std::vector<LayerParams<T>> layers;
        layers.reserve(cfg_.layers);
        for (std::size_t i = 0; i < cfg_.layers; ++i) {
            char idx[8];
            std::snprintf(idx, sizeof(idx), "%02zu", i);
            const std::string base = prefix + ".layer" + idx + ".";
            LayerParams<T> lp;
            lp.attn.wq = store_.add(base + "attn.wq", {h, h}, InitKind::normal);
            lp.attn.bq = store_.add(base + "attn.bq", {h}, InitKind::zeros);
            lp.attn.wk = store_.add(base + "attn.wk", {h, h}, InitKind::normal);
            lp.attn.bk = store_.add(base + "attn.bk", {h}, InitKind::zeros);
            lp.attn.wv = store_.add(base + "attn.wv", {h, h}, InitKind::normal);
            lp.attn.bv = store_.add(base + "attn.bv", {h}, InitKind::zeros);
            lp.attn.wo = store_.add(base + "attn.wo", {h, h}, InitKind::normal);
            lp.attn.bo = store_.add(base + "attn.bo", {h}, InitKind::zeros);
            lp.ffn_w1 = store_.add(base + "ffn.w1", {h, 4 * h}, InitKind::normal);
            lp.ffn_b1 = store_.add(base + "ffn.b1", {4 * h}, InitKind::zeros);
            lp.ffn_w2 = store_.add(base + "ffn.w2", {4 * h, h}, InitKind::normal);
            lp.ffn_b2 = store_.add(base + "ffn.b2", {h}, InitKind::zeros);
            lp.ln_attn_g = store_.add(base + "ln_attn.g", {h}, InitKind::ones);
            lp.ln_attn_b = store_.add(base + "ln_attn.b", {h}, InitKind::zeros);
            lp.ln_cross_g = store_.add(base + "ln_cross.g", {h}, InitKind::ones);
            lp.ln_cross_b = store_.add(base + "ln_cross.b", {h}, InitKind::zeros);
            lp.ln_ffn_g = store_.add(base + "ln_ffn.g", {h}, InitKind::ones);
            lp.ln_ffn_b = store_.add(base + "ln_ffn.b", {h}, InitKind::zeros);
            if (with_signal) {
                lp.sig_k = store_.add(base + "sig.k", {h}, InitKind::zeros);
                lp.sig_v = store_.add(base + "sig.v", {h}, InitKind::zeros);
            }
            layers.push_back(std::move(lp));
        }
        return layers;
    }

    ModelConfig cfg_;
    ParamStore<T> store_;
    Tensor<T> token_table_, pos_table_, seg_table_;
    Tensor<T> region_w_, region_b_;
    AoaParams<T> aoa_;
    std::vector<LayerParams<T>> enc_layers_, dec_layers_;
    Tensor<T> final_ln_g_, final_ln_b_;
    Tensor<T> tifg_w_, tifg_b_, tifg_query_;
    Tensor<T> align_w_;
};

} // namespace xgpt
