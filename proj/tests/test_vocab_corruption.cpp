#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "xgpt/corruption.hpp"
#include "xgpt/rng.hpp"
#include "xgpt/vocab.hpp"

using namespace xgpt;

namespace {

Vocabulary tiny_vocab() {
    return Vocabulary::from_words({"a", "red", "blue", "circle", "square", "above"});
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("vocabulary reserves the five control tokens up front") {
    Vocabulary v = tiny_vocab();
    REQUIRE(v.size() == 11);
    REQUIRE(v.num_words() == 6);
    REQUIRE(v.token(kPadId) == "[PAD]");
    REQUIRE(v.token(kBosId) == "[BOS]");
    REQUIRE(v.token(kEosId) == "[EOS]");
    REQUIRE(v.token(kMaskId) == "[MASK]");
    REQUIRE(v.token(kUnkId) == "[UNK]");
    REQUIRE(v.is_reserved(kMaskId));
    REQUIRE(!v.is_reserved(kNumReserved));
}

TEST_CASE("encode decodes back and unknown words map to the unknown id") {
    Vocabulary v = tiny_vocab();
    const std::vector<int> ids = v.encode("a red circle");
    REQUIRE(ids.size() == 3);
    REQUIRE(v.decode(ids) == "a red circle");
    const std::vector<int> unk = v.encode("a purple circle");
    REQUIRE(unk[1] == kUnkId);
}

TEST_CASE("encode truncates to the length cap") {
    Vocabulary v = tiny_vocab();
    std::string text;
    for (int i = 0; i < 100; ++i) text += "red ";
    REQUIRE(v.encode(text).size() == kMaxSequenceLen);
    REQUIRE(v.encode(text, 4).size() == 4);
}

TEST_CASE("vocabulary files round-trip and malformed files are rejected") {
    Vocabulary v = tiny_vocab();
    const std::string path = temp_path("xgpt_vocab_roundtrip.txt");
    v.save(path);
    Vocabulary loaded = Vocabulary::load(path);
    REQUIRE(loaded.size() == v.size());
    for (int i = 0; i < v.size(); ++i) REQUIRE(loaded.token(i) == v.token(i));

    const std::string bad = temp_path("xgpt_vocab_bad.txt");
    {
        std::ofstream out(bad);
        out << "[PAD]\n[BOS]\n[EOS]\n[UNK]\n[MASK]\nword\n";  // reserved rows swapped
    }
    REQUIRE_THROWS(Vocabulary::load(bad));
    std::remove(path.c_str());
    std::remove(bad.c_str());
}

TEST_CASE("duplicate and empty tokens are rejected") {
    REQUIRE_THROWS(Vocabulary::from_words({"a", "a"}));
    REQUIRE_THROWS(Vocabulary::from_words({"a", ""}));
}

TEST_CASE("fragment masking flags one contiguous run of half the tokens") {
    Vocabulary v = tiny_vocab();
    for (std::uint64_t ex = 0; ex < 500; ++ex) {
        RngStream rng(3, ex, "frag");
        const std::vector<int> sentence = {5, 6, 7, 8, 9, 10, 5};  // M = 7
        const auto s = sample_fragment(sentence, rng, v);
        REQUIRE(s.has_value());
        REQUIRE(s->strategy == MaskStrategy::fragment);
        REQUIRE(s->original == sentence);
        REQUIRE(s->spans.size() == 1);
        REQUIRE(s->spans[0].len == 4);  // round(0.5 * 7)
        std::size_t flagged = 0;
        for (std::size_t i = 0; i < sentence.size(); ++i) {
            if (s->mask_flags[i]) {
                ++flagged;
                REQUIRE(i >= s->spans[0].start);
                REQUIRE(i < s->spans[0].start + s->spans[0].len);
            }
        }
        REQUIRE(flagged == 4);
        REQUIRE(s->corrupted.size() == sentence.size());
        for (std::size_t i = 0; i < sentence.size(); ++i) {
            if (!s->mask_flags[i]) REQUIRE(s->corrupted[i] == sentence[i]);
        }
    }
}

TEST_CASE("fragment length clamps to leave at least one visible token") {
    Vocabulary v = tiny_vocab();
    RngStream rng(4, 0, "frag");
    const auto two = sample_fragment({5, 6}, rng, v);
    REQUIRE(two.has_value());
    REQUIRE(two->spans[0].len == 1);
    REQUIRE_FALSE(sample_fragment({5}, rng, v).has_value());
    REQUIRE_FALSE(sample_fragment({}, rng, v).has_value());
}

TEST_CASE("fragment start positions cover the whole legal range") {
    Vocabulary v = tiny_vocab();
    const std::vector<int> sentence = {5, 6, 7, 8, 9, 10};  // M=6, frag 3, starts 0..3
    std::set<std::size_t> starts;
    for (std::uint64_t ex = 0; ex < 400; ++ex) {
        RngStream rng(5, ex, "frag");
        starts.insert(sample_fragment(sentence, rng, v)->spans[0].start);
    }
    REQUIRE((starts == std::set<std::size_t>{0, 1, 2, 3}));
}

TEST_CASE("flagged positions follow the mask/replace/keep split roughly") {
    Vocabulary v = tiny_vocab();
    std::size_t masked = 0, replaced = 0, kept = 0, total = 0;
    const std::vector<int> sentence = {5, 6, 7, 8, 9, 10, 5, 6, 9, 7};
    for (std::uint64_t ex = 0; ex < 3000; ++ex) {
        RngStream rng(6, ex, "frag");
        const auto s = sample_fragment(sentence, rng, v);
        for (std::size_t i = 0; i < sentence.size(); ++i) {
            if (!s->mask_flags[i]) continue;
            ++total;
            if (s->corrupted[i] == kMaskId) {
                ++masked;
            } else if (s->corrupted[i] == sentence[i]) {
                ++kept;
            } else {
                ++replaced;
                REQUIRE(s->corrupted[i] >= kNumReserved);  // draws are real words
            }
        }
    }
    const double n = static_cast<double>(total);
    REQUIRE(masked / n == Catch::Approx(0.8).margin(0.02));
    // random draws sometimes pick the original word, shifting replace -> keep
    REQUIRE(replaced / n == Catch::Approx(0.1).margin(0.02));
    REQUIRE(kept / n == Catch::Approx(0.1).margin(0.02));
}

TEST_CASE("span lengths are positive and capped") {
    RngStream rng(7, 0, "span");
    for (int i = 0; i < 2000; ++i) {
        const std::size_t len = sample_span_length(rng, 4);
        REQUIRE(len >= 1);
        REQUIRE(len <= 4);
    }
    REQUIRE_THROWS_AS(sample_span_length(rng, 0), std::invalid_argument);
}

TEST_CASE("span corruption keeps gaps and in single mode collapses spans") {
    Vocabulary v = tiny_vocab();
    const std::vector<int> sentence = {5, 6, 7, 8, 9, 10, 5, 6, 9, 7, 8, 6};  // M = 12
    for (std::uint64_t ex = 0; ex < 500; ++ex) {
        RngStream rng(8, ex, "span");
        const auto s = sample_spans(sentence, rng, /*single_mask=*/true, v);
        REQUIRE(s.has_value());
        REQUIRE(s->strategy == MaskStrategy::span_single);

        std::size_t total_len = 0;
        for (std::size_t i = 0; i < s->spans.size(); ++i) {
            const Span& sp = s->spans[i];
            REQUIRE(sp.len >= 1);
            REQUIRE(sp.start + sp.len <= sentence.size());
            total_len += sp.len;
            if (i > 0) {
                const Span& prev = s->spans[i - 1];
                REQUIRE(sp.start >= prev.start + prev.len + 1);  // >= 1 clear token between
            }
        }
        // each span contributes exactly one mask token
        REQUIRE(sentence.size() - s->corrupted.size() == total_len - s->spans.size());
        std::size_t mask_count = 0;
        for (int t : s->corrupted) {
            if (t == kMaskId) ++mask_count;
        }
        REQUIRE(mask_count == s->spans.size());
        // surviving tokens appear unchanged and in order
        std::vector<int> surviving;
        for (std::size_t i = 0; i < sentence.size(); ++i) {
            if (!s->mask_flags[i]) surviving.push_back(sentence[i]);
        }
        std::vector<int> corrupted_words;
        for (int t : s->corrupted) {
            if (t != kMaskId) corrupted_words.push_back(t);
        }
        REQUIRE(surviving == corrupted_words);
    }
}

TEST_CASE("multi mode holds one mask per hidden token") {
    Vocabulary v = tiny_vocab();
    const std::vector<int> sentence = {5, 6, 7, 8, 9, 10, 5, 6, 9, 7};
    for (std::uint64_t ex = 0; ex < 300; ++ex) {
        RngStream rng(9, ex, "span");
        const auto s = sample_spans(sentence, rng, /*single_mask=*/false, v);
        REQUIRE(s->strategy == MaskStrategy::span_multi);
        REQUIRE(s->corrupted.size() == sentence.size());
        for (std::size_t i = 0; i < sentence.size(); ++i) {
            if (s->mask_flags[i]) {
                REQUIRE(s->corrupted[i] == kMaskId);
            } else {
                REQUIRE(s->corrupted[i] == sentence[i]);
            }
        }
    }
}

TEST_CASE("span budget covers about a third of the sentence") {
    Vocabulary v = tiny_vocab();
    const std::vector<int> sentence(12, 5);  // budget = round(0.3 * 12) = 4
    for (std::uint64_t ex = 0; ex < 200; ++ex) {
        RngStream rng(10, ex, "span");
        const auto s = sample_spans(sentence, rng, true, v);
        std::size_t covered = 0;
        for (auto f : s->mask_flags) covered += f;
        REQUIRE(covered >= 1);
        REQUIRE(covered <= 4);
    }
}

TEST_CASE("span corruption skips sentences that are too short") {
    Vocabulary v = tiny_vocab();
    RngStream rng(11, 0, "span");
    REQUIRE_FALSE(sample_spans({5}, rng, true, v).has_value());
}
