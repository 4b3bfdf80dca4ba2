#pragma once

// Caption decoding.  Both search strategies consume the same step scorer — a
// function from the tokens generated so far to a log-probability vector over
// the vocabulary — so a width-1 beam reproduces greedy output bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "xgpt/model.hpp"
#include "xgpt/representation.hpp"
#include "xgpt/vocab.hpp"

namespace xgpt {

// Logprobs for the next token given the prefix (generated tokens, no [BOS]).
using StepScorer = std::function<std::vector<double>(const std::vector<int>&)>;

struct Hypothesis {
    std::vector<int> tokens;  // emitted tokens, terminator excluded
    double score = 0.0;       // sum of token logprobs, terminator included
};

inline constexpr double kBannedScore = -std::numeric_limits<double>::infinity();

// Control tokens never emitted during generation.  [EOS] stays legal.
inline bool is_banned_output(int id) {
    return id == kPadId || id == kBosId || id == kMaskId || id == kUnkId;
}

inline void ban_control_tokens(std::vector<double>& logprobs) {
    for (std::size_t id = 0; id < logprobs.size(); ++id) {
        if (is_banned_output(static_cast<int>(id))) logprobs[id] = kBannedScore;
    }
}

// score desc, then token sequence lexicographically asc.
inline bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
}

inline Hypothesis greedy_search(const StepScorer& scorer, std::size_t max_len) {
    Hypothesis hyp;
    for (std::size_t step = 0; step < max_len; ++step) {
        std::vector<double> logprobs = scorer(hyp.tokens);
        ban_control_tokens(logprobs);
        int best = -1;
        double best_lp = kBannedScore;
        for (std::size_t id = 0; id < logprobs.size(); ++id) {
            if (logprobs[id] > best_lp) {  // strict: ties keep the lowest id
                best_lp = logprobs[id];
                best = static_cast<int>(id);
            }
        }
        if (best < 0) throw std::runtime_error("greedy_search: every token is banned");
        hyp.score += best_lp;
        if (best == kEosId) return hyp;
        hyp.tokens.push_back(best);
    }
    return hyp;
}

inline Hypothesis beam_search(const StepScorer& scorer, std::size_t beam_width,
                              std::size_t max_len) {
    if (beam_width == 0) throw std::invalid_argument("beam_search: beam width must be >= 1");
    struct Live {
        std::vector<int> tokens;
        double score = 0.0;
    };
    std::vector<Live> live{Live{}};
    std::vector<Hypothesis> finished;

    for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
        struct Candidate {
            std::vector<int> tokens;  // includes the freshly appended token
            double score;
        };
        std::vector<Candidate> pool;
        for (const Live& beam : live) {
            std::vector<double> logprobs = scorer(beam.tokens);
            ban_control_tokens(logprobs);
            for (std::size_t id = 0; id < logprobs.size(); ++id) {
                if (logprobs[id] == kBannedScore) continue;
                Candidate c;
                c.tokens = beam.tokens;
                c.tokens.push_back(static_cast<int>(id));
                c.score = beam.score + logprobs[id];
                pool.push_back(std::move(c));
            }
        }
        if (pool.empty()) throw std::runtime_error("beam_search: every continuation is banned");
        std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.tokens < b.tokens;
        });
        if (pool.size() > beam_width) pool.resize(beam_width);

        live.clear();
        for (Candidate& c : pool) {
            if (c.tokens.back() == kEosId) {
                c.tokens.pop_back();
                finished.push_back(Hypothesis{std::move(c.tokens), c.score});
            } else {
                live.push_back(Live{std::move(c.tokens), c.score});
            }
        }

        // A finished hypothesis strictly above every live one can never be
        // overtaken: logprobs only decrease a live score.
        if (!finished.empty() && !live.empty()) {
            double best_finished = kBannedScore;
            for (const Hypothesis& h : finished) best_finished = std::max(best_finished, h.score);
            double best_live = kBannedScore;
            for (const Live& l : live) best_live = std::max(best_live, l.score);
            if (best_finished > best_live) break;
        }
    }

    std::vector<Hypothesis> ranked = finished;
    for (Live& l : live) ranked.push_back(Hypothesis{std::move(l.tokens), l.score});
    if (ranked.empty()) throw std::runtime_error("beam_search: no hypotheses produced");
    std::sort(ranked.begin(), ranked.end(), hypothesis_before);
    return ranked.front();
}

// Scorer backed by a model: the regions are encoded once, each prefix is then
// re-decoded in full (no incremental cache — sequences here are short).
template <typename T>
class ModelScorer {
public:
    ModelScorer(Model<T>& model, const RegionSet& regions) : model_(model) {
        NoGradGuard off;
        ForwardCtx<T> ctx;
        ctx.training = false;
        Tensor<T> input = model_.assemble_encoder_input(model_.refined_regions(regions), std::nullopt);
        memory_ = model_.encode(input, ctx);
    }

    std::vector<double> operator()(const std::vector<int>& prefix) const {
        NoGradGuard off;
        ForwardCtx<T> ctx;
        ctx.training = false;
        std::vector<int> dec_in;
        dec_in.reserve(prefix.size() + 1);
        dec_in.push_back(kBosId);
        dec_in.insert(dec_in.end(), prefix.begin(), prefix.end());
        Tensor<T> logits = model_.decode(dec_in, memory_, ctx);
        const std::size_t v = logits.extent(1);
        const std::size_t last = logits.extent(0) - 1;
        const T* row = logits.values().data() + last * v;
        // log-softmax in double so scores are stable across beam widths
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < v; ++i) mx = std::max(mx, static_cast<double>(row[i]));
        double denom = 0.0;
        for (std::size_t i = 0; i < v; ++i) denom += std::exp(static_cast<double>(row[i]) - mx);
        const double log_denom = std::log(denom);
        std::vector<double> out(v);
        for (std::size_t i = 0; i < v; ++i) {
            out[i] = static_cast<double>(row[i]) - mx - log_denom;
        }
        return out;
    }

private:
    Model<T>& model_;
    Tensor<T> memory_;
};

template <typename T>
Hypothesis caption_regions(Model<T>& model, const RegionSet& regions, std::size_t beam_width,
                           std::size_t max_len = kMaxSequenceLen) {
    // the decoder input is [BOS] + emitted tokens, so emission stops one short
    // of the model's position table no matter what cap the caller asked for
    max_len = std::min(max_len, model.config().max_positions - 1);
    ModelScorer<T> scorer(model, regions);
    StepScorer step = [&scorer](const std::vector<int>& prefix) { return scorer(prefix); };
    if (beam_width <= 1) return greedy_search(step, max_len);
    return beam_search(step, beam_width, max_len);
}

} // namespace xgpt
