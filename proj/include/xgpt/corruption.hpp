#pragma once

// Sentence corruption for the denoising objectives.
//
// Fragment corruption: one contiguous fragment of about half the tokens is
// noised in place with the 80/10/10 rule ([MASK] / random word / unchanged);
// the decoder later reconstructs exactly the fragment.
//
// Span corruption: several non-adjacent spans are drawn left to right with
// zero-truncated Poisson(3) lengths under a round(rate * M) token budget; in
// single mode each span collapses to one [MASK] (shortening the sentence),
// in multi mode every masked token keeps its own [MASK].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "xgpt/rng.hpp"
#include "xgpt/vocab.hpp"

namespace xgpt {

enum class MaskStrategy { fragment, span_single, span_multi };

struct Span {
    std::size_t start = 0;
    std::size_t len = 0;
};

struct MaskedSample {
    MaskStrategy strategy = MaskStrategy::fragment;
    std::vector<int> original;                 // w
    std::vector<int> corrupted;                // w-hat fed to the encoder
    std::vector<int> target_tokens;            // tokens the decoder must produce
    std::vector<std::size_t> target_positions; // their original sentence indices
    std::vector<std::uint8_t> mask_flags;      // m_t over the original sentence
    std::vector<Span> spans;                   // span mode only
};

// 80% [MASK], 10% random non-reserved token, 10% unchanged, independently per
// flagged position.
inline std::vector<int> apply_801010(std::vector<int> tokens,
                                     const std::vector<std::size_t>& flagged, RngStream& rng,
                                     const Vocabulary& vocab) {
    if (vocab.num_words() <= 0) {
        throw std::invalid_argument("apply_801010: vocabulary has no non-reserved tokens");
    }
    for (std::size_t pos : flagged) {
        if (pos >= tokens.size()) {
            throw std::out_of_range("apply_801010: flagged position " + std::to_string(pos) +
                                    " outside sentence of " + std::to_string(tokens.size()));
        }
        const double u = rng.next_double();
        if (u < 0.8) {
            tokens[pos] = kMaskId;
        } else if (u < 0.9) {
            tokens[pos] = kNumReserved +
                          static_cast<int>(rng.next_below(static_cast<std::uint64_t>(vocab.num_words())));
        }
        // else: leave the original token in place
    }
    return tokens;
}

// Contiguous fragment of round(0.5 * M) tokens (clamped to [1, M-1]) at a
// uniform start.  Returns nothing for sentences too short to corrupt.
inline std::optional<MaskedSample> sample_fragment(const std::vector<int>& sentence, RngStream& rng,
                                                   const Vocabulary& vocab,
                                                   double fragment_rate = 0.5) {
    const std::size_t m = sentence.size();
    if (m < 2) return std::nullopt;
    std::size_t frag_len = static_cast<std::size_t>(std::llround(fragment_rate * static_cast<double>(m)));
    frag_len = std::max<std::size_t>(1, std::min(frag_len, m - 1));
    const std::size_t start = rng.next_below(m - frag_len + 1);

    MaskedSample s;
    s.strategy = MaskStrategy::fragment;
    s.original = sentence;
    s.mask_flags.assign(m, 0);
    for (std::size_t i = start; i < start + frag_len; ++i) {
        s.mask_flags[i] = 1;
        s.target_tokens.push_back(sentence[i]);
        s.target_positions.push_back(i);
    }
    s.corrupted = apply_801010(sentence, s.target_positions, rng, vocab);
    s.spans.push_back({start, frag_len});
    return s;
}

// One zero-truncated Poisson(3) span length, re-drawn until it also fits the
// remaining budget.  Exposed separately so its distribution is testable.
inline std::size_t sample_span_length(RngStream& rng, std::size_t budget_cap) {
    if (budget_cap == 0) throw std::invalid_argument("sample_span_length: budget must be positive");
    std::uint64_t len;
    do {
        len = rng.next_poisson(3.0);
    } while (len < 1 || len > budget_cap);
    return static_cast<std::size_t>(len);
}

inline std::optional<MaskedSample> sample_spans(const std::vector<int>& sentence, RngStream& rng,
                                                bool single_mask, const Vocabulary& vocab,
                                                double mask_rate = 0.3) {
    (void)vocab;
    const std::size_t m = sentence.size();
    if (m < 2) return std::nullopt;
    std::size_t budget = static_cast<std::size_t>(std::llround(mask_rate * static_cast<double>(m)));
    budget = std::max<std::size_t>(1, budget);

    MaskedSample s;
    s.strategy = single_mask ? MaskStrategy::span_single : MaskStrategy::span_multi;
    s.original = sentence;
    s.mask_flags.assign(m, 0);

    std::size_t cursor = 0;  // first index the next span may occupy
    while (budget > 0 && cursor < m) {
        const std::size_t cap = std::min(budget, m - cursor);
        const std::size_t len = sample_span_length(rng, cap);
        const std::size_t start = cursor + rng.next_below(m - len - cursor + 1);
        s.spans.push_back({start, len});
        for (std::size_t i = start; i < start + len; ++i) s.mask_flags[i] = 1;
        budget -= len;
        cursor = start + len + 1;  // enforce at least one unmasked gap
    }

    // Encoder stream: spans collapse to one [MASK] each, or mask per token.
    for (std::size_t i = 0; i < m; ++i) {
        if (!s.mask_flags[i]) {
            s.corrupted.push_back(sentence[i]);
        } else if (!single_mask) {
            s.corrupted.push_back(kMaskId);
        } else if (i == 0 || !s.mask_flags[i - 1]) {
            s.corrupted.push_back(kMaskId);  // first token of a span
        }
    }

    // Decoder reconstructs the whole sentence.
    s.target_tokens = sentence;
    s.target_positions.resize(m);
    for (std::size_t i = 0; i < m; ++i) s.target_positions[i] = i;
    return s;
}

} // namespace xgpt
