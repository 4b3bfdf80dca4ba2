#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <set>

#include "xgpt/model.hpp"

using namespace xgpt;

namespace {

ModelConfig tiny_config(bool share = true) {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.vocab = 23;
    cfg.d_feat = 10;
    cfg.max_positions = 32;
    cfg.max_regions = 8;
    cfg.dropout = 0.0;
    cfg.share = share;
    return cfg;
}

RegionSet two_regions(std::size_t d_feat) {
    RegionSet rs;
    rs.d_feat = d_feat;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < d_feat; ++c) {
            rs.features.push_back(static_cast<float>((r * d_feat + c) % 3) * 0.25f);
        }
    }
    // dyadic boxes: values k/256 survive binary32 exactly
    rs.positions = {16.0f / 256, 32.0f / 256, 80.0f / 256,  96.0f / 256,
                    (64.0f * 64) / 65536,     128.0f / 256,  8.0f / 256,
                    192.0f / 256, 72.0f / 256, (64.0f * 64) / 65536};
    rs.validate();
    return rs;
}

// closed-form expected parameter count; see build(): token/pos/seg tables,
// region projection, the refining block, L transformer layers with 4h^2 + 4h
// attention, 8h^2 + 5h feed-forward, 6h of norms (+2h signal when shared),
// one final norm pair, the h^2 + h generation head, query table, align vector
std::size_t expected_total(const ModelConfig& c) {
    const std::size_t h = c.width;
    std::size_t n = 0;
    n += c.vocab * h + c.max_positions * h + 2 * h;
    n += (c.d_feat + kPositionDim) * h + h;
    n += 7 * h * h + 4 * h;
    const std::size_t per_layer = 12 * h * h + 15 * h + (c.share ? 2 * h : 0);
    const std::size_t stacks = c.share ? 1 : 2;
    n += c.layers * stacks * per_layer;
    n += 2 * h;
    n += h * h + h;
    n += c.max_regions * h;
    n += 3 * h;
    return n;
}

} // namespace

TEST_CASE("parameter totals match the closed form in both modes") {
    for (bool share : {true, false}) {
        Model<float> m(tiny_config(share));
        REQUIRE(m.total_parameters() == expected_total(tiny_config(share)));
    }
}

TEST_CASE("unshared total exceeds shared by one stack minus the signal vectors") {
    const ModelConfig on = tiny_config(true);
    const ModelConfig off = tiny_config(false);
    Model<float> shared(on), separate(off);
    const std::size_t h = on.width;
    const std::size_t extra_stack = on.layers * (12 * h * h + 15 * h);
    const std::size_t signal = on.layers * 2 * h;
    REQUIRE(separate.total_parameters() == shared.total_parameters() + extra_stack - signal);
}

TEST_CASE("sharing keeps exactly one transformer stack") {
    Model<float> shared(tiny_config(true));
    std::size_t stack = 0, enc = 0, dec = 0, sig = 0;
    for (const auto& [name, t] : shared.params().entries()) {
        if (name.rfind("stack.", 0) == 0) ++stack;
        if (name.rfind("enc.", 0) == 0) ++enc;
        if (name.rfind("dec.", 0) == 0) ++dec;
        if (name.find(".sig.") != std::string::npos) ++sig;
    }
    REQUIRE(stack > 0);
    REQUIRE(enc == 0);
    REQUIRE(dec == 0);
    REQUIRE(sig == 2 * tiny_config().layers);

    Model<float> separate(tiny_config(false));
    stack = enc = dec = sig = 0;
    for (const auto& [name, t] : separate.params().entries()) {
        if (name.rfind("stack.", 0) == 0) ++stack;
        if (name.rfind("enc.", 0) == 0) ++enc;
        if (name.rfind("dec.", 0) == 0) ++dec;
        if (name.find(".sig.") != std::string::npos) ++sig;
    }
    REQUIRE(stack == 0);
    REQUIRE(enc > 0);
    REQUIRE(dec > 0);
    REQUIRE(sig == 0);
}

TEST_CASE("same seed reproduces identical parameters") {
    Model<float> a(tiny_config());
    Model<float> b(tiny_config());
    a.init(99);
    b.init(99);
    for (const auto& [name, ta] : a.params().entries()) {
        const auto& tb = b.params().entries().at(name);
        REQUIRE(std::memcmp(ta.values().data(), tb.values().data(),
                            ta.size() * sizeof(float)) == 0);
    }
    Model<float> c(tiny_config());
    c.init(100);
    bool any_diff = false;
    for (const auto& [name, tc] : c.params().entries()) {
        const auto& ta = a.params().entries().at(name);
        if (std::memcmp(ta.values().data(), tc.values().data(), ta.size() * sizeof(float)) != 0) {
            any_diff = true;
        }
    }
    REQUIRE(any_diff);
}

TEST_CASE("token embedding adds position rows and checks bounds") {
    Model<float> m(tiny_config());
    m.init(1);
    Tensor<float> rows = m.embed_tokens({1, 5, 7});
    REQUIRE((rows.shape() == Shape{3, 16}));
    REQUIRE_THROWS_AS(m.embed_tokens({23}), std::out_of_range);
    REQUIRE_THROWS_AS(m.embed_tokens({-1}), std::out_of_range);
    std::vector<int> too_long(33, 1);
    REQUIRE_THROWS(m.embed_tokens(too_long));
}

TEST_CASE("region projection validates the feature dimension") {
    Model<float> m(tiny_config());
    m.init(1);
    RegionSet rs = two_regions(10);
    REQUIRE((m.project_regions(rs).shape() == Shape{2, 16}));
    REQUIRE((m.refined_regions(rs).shape() == Shape{2, 16}));
    RegionSet wrong = two_regions(10);
    wrong.d_feat = 5;
    wrong.features.resize(2 * 5);
    REQUIRE_THROWS(m.project_regions(wrong));
}

TEST_CASE("encoder input places regions before text with segment offsets") {
    Model<float> m(tiny_config());
    m.init(1);
    RegionSet rs = two_regions(10);
    Tensor<float> regions = m.project_regions(rs);
    Tensor<float> text = m.embed_tokens({5, 6, 7});
    Tensor<float> both = m.assemble_encoder_input(regions, text);
    REQUIRE((both.shape() == Shape{5, 16}));

    const auto& seg = m.params().at("embed.seg").values();
    for (std::size_t c = 0; c < 16; ++c) {
        REQUIRE(both.values()[c] == regions.values()[c] + seg[c]);            // segment 0
        REQUIRE(both.values()[2 * 16 + c] == text.values()[c] + seg[16 + c]); // segment 1
    }
    REQUIRE_THROWS(m.assemble_encoder_input(std::nullopt, std::nullopt));
}

TEST_CASE("decoder self-attention is causal bit for bit") {
    Model<float> m(tiny_config());
    m.init(3);
    ForwardCtx<float> ctx;
    RegionSet rs = two_regions(10);
    Tensor<float> memory = m.encode(m.assemble_encoder_input(m.refined_regions(rs), std::nullopt), ctx);

    Tensor<float> h1 = m.decode(std::vector<int>{1, 5, 6, 7}, memory, ctx);
    Tensor<float> h2 = m.decode(std::vector<int>{1, 5, 6, 9}, memory, ctx);  // last token differs
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 23; ++c) {
            REQUIRE(h1.values()[r * 23 + c] == h2.values()[r * 23 + c]);
        }
    }
    bool last_differs = false;
    for (std::size_t c = 0; c < 23; ++c) {
        if (h1.values()[3 * 23 + c] != h2.values()[3 * 23 + c]) last_differs = true;
    }
    REQUIRE(last_differs);
}

TEST_CASE("masked encoder keys do not disturb surviving rows bit for bit") {
    Model<float> m(tiny_config());
    m.init(4);
    ForwardCtx<float> ctx;
    Tensor<float> text = m.embed_tokens({5, 6, 7, 8});
    Tensor<float> base = m.encode(text, ctx);

    Tensor<float> padded_rows = m.embed_tokens({5, 6, 7, 8, 9, 10});
    std::vector<std::uint8_t> key_valid = {1, 1, 1, 1, 0, 0};
    Tensor<float> padded = m.encode(padded_rows, ctx, key_valid);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 16; ++c) {
            REQUIRE(base.values()[r * 16 + c] == padded.values()[r * 16 + c]);
        }
    }
    REQUIRE_THROWS(m.encode(padded_rows, ctx, std::vector<std::uint8_t>{1, 1}));
}

TEST_CASE("signal bias shifts only the cross-attention path") {
    Model<float> m(tiny_config(true));
    m.init(5);
    ForwardCtx<float> ctx;
    RegionSet rs = two_regions(10);

    Tensor<float> enc_in = m.assemble_encoder_input(m.refined_regions(rs), std::nullopt);
    Tensor<float> memory_before = m.encode(enc_in, ctx);
    Tensor<float> dec_before = m.decode({1, 5, 6}, memory_before, ctx);

    // the value-path bias must move decoder outputs; the key-path bias adds a
    // uniform score shift per query that attention normalization cancels, so
    // only sig.v gives a guaranteed visible change
    for (std::size_t l = 0; l < 2; ++l) {
        for (const char* leaf : {"sig.k", "sig.v"}) {
            char name[64];
            std::snprintf(name, sizeof(name), "stack.layer%02zu.%s", l, leaf);
            for (auto& v : m.params().at(name).values()) v = 0.5f;
        }
    }
    Tensor<float> memory_after = m.encode(enc_in, ctx);
    for (std::size_t i = 0; i < memory_before.size(); ++i) {
        REQUIRE(memory_before.values()[i] == memory_after.values()[i]);  // encoder untouched
    }
    Tensor<float> dec_after = m.decode({1, 5, 6}, memory_after, ctx);
    bool changed = false;
    for (std::size_t i = 0; i < dec_before.size(); ++i) {
        if (dec_before.values()[i] != dec_after.values()[i]) changed = true;
    }
    REQUIRE(changed);
}

TEST_CASE("logits tie to the token table") {
    Model<float> m(tiny_config());
    m.init(6);
    ForwardCtx<float> ctx;
    Tensor<float> hidden = Tensor<float>::zeros({1, 16});
    hidden.values()[3] = 1.0f;
    Tensor<float> logits = m.lm_logits(hidden);
    REQUIRE((logits.shape() == Shape{1, 23}));
    const auto& table = m.params().at("embed.token").values();
    for (std::size_t v = 0; v < 23; ++v) {
        REQUIRE(logits.values()[v] == table[v * 16 + 3]);  // row dot one-hot
    }
}

TEST_CASE("region query table bounds the query count") {
    Model<float> m(tiny_config());
    m.init(7);
    REQUIRE((m.tifg_queries(3).shape() == Shape{3, 16}));
    REQUIRE_THROWS_AS(m.tifg_queries(0), std::invalid_argument);
    REQUIRE_THROWS_AS(m.tifg_queries(9), std::out_of_range);
}

TEST_CASE("refining block keeps shape and actually transforms") {
    Model<float> m(tiny_config());
    m.init(8);
    RegionSet rs = two_regions(10);
    Tensor<float> plain = m.project_regions(rs);
    Tensor<float> refined = m.refined_regions(rs);
    REQUIRE(plain.shape() == refined.shape());
    bool differs = false;
    for (std::size_t i = 0; i < plain.size(); ++i) {
        if (plain.values()[i] != refined.values()[i]) differs = true;
    }
    REQUIRE(differs);
}

TEST_CASE("forward passes run identically with sharing off") {
    Model<float> m(tiny_config(false));
    m.init(9);
    ForwardCtx<float> ctx;
    RegionSet rs = two_regions(10);
    Tensor<float> memory = m.encode(m.assemble_encoder_input(m.refined_regions(rs), std::nullopt), ctx);
    Tensor<float> h = m.decode({1, 5, 6}, memory, ctx);
    REQUIRE((h.shape() == Shape{3, 23}));
}

TEST_CASE("config validation rejects impossible geometry") {
    ModelConfig bad = tiny_config();
    bad.width = 15;  // not divisible by heads
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    ModelConfig small_vocab = tiny_config();
    small_vocab.vocab = 4;
    REQUIRE_THROWS_AS(small_vocab.validate(), std::invalid_argument);
    ModelConfig no_layers = tiny_config();
    no_layers.layers = 0;
    REQUIRE_THROWS_AS(no_layers.validate(), std::invalid_argument);
}
