#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "xgpt/decoding.hpp"
#include "xgpt/rng.hpp"

using namespace xgpt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.vocab = 11;
    cfg.d_feat = 4;
    cfg.max_positions = 64;
    cfg.max_regions = 4;
    cfg.dropout = 0.0;
    cfg.share = true;
    return cfg;
}

RegionSet one_region(std::size_t d_feat = 4) {
    RegionSet rs;
    rs.d_feat = d_feat;
    rs.features = {0.25f, 0.5f, 0.75f, 1.0f};
    rs.positions = {16.0f / 256, 32.0f / 256, 80.0f / 256, 96.0f / 256, (64.0f * 64) / 65536};
    rs.validate();
    return rs;
}

// log-probability table keyed by the last emitted token (or none), over three
// live outcomes: terminator, word 5, word 6 inside a 7-slot vocabulary
StepScorer two_word_scorer(double eos0, double w5_0, double w6_0,
                           std::map<int, std::array<double, 3>> by_last) {
    return [=](const std::vector<int>& prefix) {
        std::array<double, 3> p = {eos0, w5_0, w6_0};
        if (!prefix.empty()) p = by_last.at(prefix.back());
        std::vector<double> lp(7, -1e30);  // reserved rows carry junk on purpose
        lp[kPadId] = 5.0;                  // must be ignored by the ban list
        lp[kEosId] = std::log(p[0]);
        lp[5] = std::log(p[1]);
        lp[6] = std::log(p[2]);
        return lp;
    };
}

// deterministic pseudo-random log-softmax table over `vocab` entries
StepScorer random_scorer(std::uint64_t trial, std::size_t vocab) {
    return [=](const std::vector<int>& prefix) {
        std::uint64_t key = 1469598103934665603ull;
        for (int t : prefix) {
            key ^= static_cast<std::uint64_t>(t) + 0x9e3779b97f4a7c15ull;
            key *= 1099511628211ull;
        }
        RngStream rng(trial, key, "table");
        std::vector<double> raw(vocab);
        double mx = -1e300;
        for (auto& v : raw) {
            v = rng.next_gaussian();
            mx = std::max(mx, v);
        }
        double denom = 0.0;
        for (double v : raw) denom += std::exp(v - mx);
        for (auto& v : raw) v = v - mx - std::log(denom);
        return raw;
    };
}

// every sequence the beam semantics could return, ranked the same way
Hypothesis exhaustive_best(const StepScorer& scorer, std::size_t max_len) {
    Hypothesis best;
    bool have_best = false;
    auto consider = [&](const Hypothesis& h) {
        if (!have_best || hypothesis_before(h, best)) {
            best = h;
            have_best = true;
        }
    };
    std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix,
                                                              double score) {
        if (prefix.size() == max_len) {
            consider(Hypothesis{prefix, score});
            return;
        }
        std::vector<double> lp = scorer(prefix);
        ban_control_tokens(lp);
        for (std::size_t id = 0; id < lp.size(); ++id) {
            if (lp[id] == kBannedScore) continue;
            if (static_cast<int>(id) == kEosId) {
                consider(Hypothesis{prefix, score + lp[id]});
            } else {
                prefix.push_back(static_cast<int>(id));
                walk(prefix, score + lp[id]);
                prefix.pop_back();
            }
        }
    };
    std::vector<int> prefix;
    walk(prefix, 0.0);
    REQUIRE(have_best);
    return best;
}

} // namespace

TEST_CASE("greedy follows the argmax and stops at the terminator") {
    auto scorer = two_word_scorer(0.05, 0.5, 0.45,
                                  {{5, {0.9, 0.05, 0.05}}, {6, {0.9, 0.05, 0.05}}});
    Hypothesis hyp = greedy_search(scorer, 10);
    REQUIRE((hyp.tokens == std::vector<int>{5}));
    REQUIRE(hyp.score == Catch::Approx(std::log(0.5) + std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("greedy resolves score ties toward the lowest token id") {
    auto scorer = two_word_scorer(0.05, 0.45, 0.45,
                                  {{5, {0.9, 0.05, 0.05}}, {6, {0.9, 0.05, 0.05}}});
    REQUIRE((greedy_search(scorer, 10).tokens == std::vector<int>{5}));
    REQUIRE((beam_search(scorer, 1, 10).tokens == std::vector<int>{5}));
}

TEST_CASE("control tokens are never emitted even when they score best") {
    // the raw table gives [PAD] the highest score everywhere
    auto scorer = two_word_scorer(0.05, 0.5, 0.45,
                                  {{5, {0.3, 0.35, 0.35}}, {6, {0.9, 0.05, 0.05}}});
    for (std::size_t width : {std::size_t(1), std::size_t(3)}) {
        Hypothesis hyp = width == 1 ? greedy_search(scorer, 6) : beam_search(scorer, width, 6);
        for (int t : hyp.tokens) {
            REQUIRE_FALSE(is_banned_output(t));
            REQUIRE(t != kEosId);
        }
    }
}

TEST_CASE("width-1 beam reproduces greedy bit for bit on random tables") {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        auto scorer = random_scorer(trial, 9);
        Hypothesis g = greedy_search(scorer, 12);
        Hypothesis b = beam_search(scorer, 1, 12);
        REQUIRE(g.tokens == b.tokens);
        REQUIRE(g.score == b.score);  // bit-identical accumulation order
    }
}

TEST_CASE("width-2 beam recovers the exhaustive optimum where greedy fails") {
    // first choice prefers word 5, but word 6's continuation is far stronger
    auto scorer = two_word_scorer(0.05, 0.5, 0.45,
                                  {{5, {0.3, 0.35, 0.35}}, {6, {0.9, 0.05, 0.05}}});
    Hypothesis beam = beam_search(scorer, 2, 2);
    Hypothesis truth = exhaustive_best(scorer, 2);
    REQUIRE(beam.tokens == truth.tokens);
    REQUIRE(beam.score == Catch::Approx(truth.score).epsilon(1e-12));
    REQUIRE((beam.tokens == std::vector<int>{6}));
    REQUIRE(beam.score == Catch::Approx(std::log(0.45) + std::log(0.9)).epsilon(1e-12));

    Hypothesis greedy = greedy_search(scorer, 2);
    REQUIRE(greedy.score < beam.score);  // the miss that motivates the beam
}

TEST_CASE("beam matches exhaustive enumeration on random tables") {
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        auto scorer = random_scorer(trial + 500, 8);
        // width >= live-vocabulary size means nothing is ever pruned
        Hypothesis beam = beam_search(scorer, 64, 4);
        Hypothesis truth = exhaustive_best(scorer, 4);
        REQUIRE(beam.tokens == truth.tokens);
        REQUIRE(beam.score == Catch::Approx(truth.score).epsilon(1e-12));
    }
}

TEST_CASE("finished hypotheses retire and stop the search early") {
    std::size_t calls = 0;
    auto counted = [&calls](const std::vector<int>& prefix) {
        calls += 1;
        std::vector<double> lp(7, -1e30);
        lp[kEosId] = prefix.empty() ? std::log(0.01) : std::log(0.98);
        lp[5] = prefix.empty() ? std::log(0.98) : std::log(0.01);
        lp[6] = std::log(0.01);
        return lp;
    };
    Hypothesis hyp = beam_search(counted, 2, 500);
    REQUIRE((hyp.tokens == std::vector<int>{5}));
    REQUIRE(hyp.score == Catch::Approx(std::log(0.98) + std::log(0.98)).epsilon(1e-12));
    // early stop: nowhere near the 500-step budget
    REQUIRE(calls <= 8);
}

TEST_CASE("beam width zero is rejected") {
    auto scorer = random_scorer(1, 8);
    REQUIRE_THROWS_AS(beam_search(scorer, 0, 5), std::invalid_argument);
}

TEST_CASE("model-backed scorer yields a normalized distribution") {
    Model<double> model(tiny_config());
    model.init(41);
    RegionSet rs = one_region();
    ModelScorer<double> scorer(model, rs);

    for (const std::vector<int>& prefix : {std::vector<int>{}, std::vector<int>{5, 6}}) {
        std::vector<double> lp = scorer(prefix);
        REQUIRE(lp.size() == 11);
        double total = 0.0;
        for (double v : lp) {
            REQUIRE(v <= 1e-12);
            total += std::exp(v);
        }
        REQUIRE(total == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("caption decoding routes width one through greedy") {
    Model<double> model(tiny_config());
    model.init(43);
    RegionSet rs = one_region();

    Hypothesis via_caption = caption_regions(model, rs, 1, 12);
    ModelScorer<double> scorer(model, rs);
    StepScorer step = [&scorer](const std::vector<int>& p) { return scorer(p); };
    Hypothesis direct = greedy_search(step, 12);
    REQUIRE(via_caption.tokens == direct.tokens);
    REQUIRE(via_caption.score == direct.score);

    Hypothesis wide = caption_regions(model, rs, 3, 12);
    REQUIRE(wide.tokens.size() <= 12);
    for (int t : wide.tokens) REQUIRE_FALSE(is_banned_output(t));
    REQUIRE(wide.score >= via_caption.score - 1e-12);  // wider search never scores worse
}
