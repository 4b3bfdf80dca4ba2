#pragma once

// The four pre-training objectives.  Each loss builds its own forward graph on
// a single example and returns a lambda-scaled scalar; batch averaging is the
// trainer's job.  Task name strings double as CLI/config vocabulary.

#include <optional>
#include <string>
#include <vector>

#include "xgpt/corruption.hpp"
#include "xgpt/model.hpp"

namespace xgpt {

enum class Task { ic, imlm, ida, tifg };

inline const std::vector<Task>& all_tasks() {
    static const std::vector<Task> order = {Task::ic, Task::imlm, Task::ida, Task::tifg};
    return order;
}

inline std::string task_name(Task t) {
    switch (t) {
        case Task::ic: return "ic";
        case Task::imlm: return "imlm";
        case Task::ida: return "ida";
        case Task::tifg: return "tifg";
    }
    throw std::logic_error("task_name: invalid task");
}

inline Task parse_task(const std::string& name) {
    for (Task t : all_tasks()) {
        if (task_name(t) == name) return t;
    }
    throw std::invalid_argument("parse_task: unknown task '" + name +
                                "' (expected ic, imlm, ida or tifg)");
}

struct LossWeights {
    double ic = 1.0, imlm = 1.0, ida = 1.0, tifg = 1.0;

    double of(Task t) const {
        switch (t) {
            case Task::ic: return ic;
            case Task::imlm: return imlm;
            case Task::ida: return ida;
            case Task::tifg: return tifg;
        }
        throw std::logic_error("LossWeights::of: invalid task");
    }

    static LossWeights uniform() { return {1.0, 1.0, 1.0, 1.0}; }
    static LossWeights captioning_weighted() { return {1.0, 0.3, 0.3, 0.3}; }
};

// Mixes region rows into every text row by a learned bilinear-ish score:
//   A_ij = w . [t_i ; r_j ; t_i * r_j],  out_i = sum_j softmax_j(A_ij) r_j.
// Each output row is a convex combination of region rows; with a zero weight
// the mixture is exactly uniform.
template <typename T>
Tensor<T> attend_text_to_regions(const Tensor<T>& text_rows, const Tensor<T>& region_rows,
                                 const Tensor<T>& align_w) {
    detail::require_rank(text_rows, 2, "attend_text_to_regions");
    detail::require_rank(region_rows, 2, "attend_text_to_regions");
    const std::size_t h = text_rows.extent(1);
    if (region_rows.extent(1) != h) {
        throw std::invalid_argument("attend_text_to_regions: text " + shape_str(text_rows.shape()) +
                                    " and regions " + shape_str(region_rows.shape()) +
                                    " disagree on width");
    }
    if (align_w.rank() != 1 || align_w.extent(0) != 3 * h) {
        throw std::invalid_argument("attend_text_to_regions: weight " + shape_str(align_w.shape()) +
                                    " must be a 3*" + std::to_string(h) + " vector");
    }
    const std::size_t m = text_rows.extent(0);
    const std::size_t n = region_rows.extent(0);

    Tensor<T> w_row = reshape(align_w, {std::size_t(1), 3 * h});
    Tensor<T> w_t = reshape(slice_cols(w_row, 0, h), {h});      // weight on t_i
    Tensor<T> w_r = reshape(slice_cols(w_row, h, h), {h});      // weight on r_j
    Tensor<T> w_x = reshape(slice_cols(w_row, 2 * h, h), {h});  // weight on t_i * r_j

    // scores = (t . w_t) 1^T + 1 (r . w_r)^T + (t * w_x) r^T, all [m x n]
    Tensor<T> t_term = reshape(matmul(text_rows, reshape(w_t, {h, std::size_t(1)})), {m});
    Tensor<T> r_term = reshape(matmul(region_rows, reshape(w_r, {h, std::size_t(1)})), {n});
    Tensor<T> cross = matmul(mul_rowvec(text_rows, w_x), transpose(region_rows));
    Tensor<T> scores = add_rowvec(add_colvec(cross, t_term), r_term);
    Tensor<T> weights = softmax(scores, 1);
    return matmul(weights, region_rows);
}

// loss = lambda * mean_t -log p(w_t | w_<t, regions) over caption + terminator.
template <typename T>
std::optional<Tensor<T>> loss_ic(Model<T>& model, const RegionSet& regions,
                                 const std::vector<int>& caption, ForwardCtx<T>& ctx,
                                 double lambda = 1.0) {
    if (caption.empty()) return std::nullopt;
    Tensor<T> region_rows = model.refined_regions(regions);
    Tensor<T> memory = model.encode(model.assemble_encoder_input(region_rows, std::nullopt), ctx);

    std::vector<int> dec_in;
    dec_in.reserve(caption.size() + 1);
    dec_in.push_back(kBosId);
    dec_in.insert(dec_in.end(), caption.begin(), caption.end());
    std::vector<int> targets(caption);
    targets.push_back(kEosId);
    std::vector<T> weights(targets.size(), T(1));

    Tensor<T> logits = model.decode(dec_in, memory, ctx);
    return scale(cross_entropy_logits(logits, targets, weights), lambda);
}

// Masked-fragment reconstruction: the encoder sees regions plus the noised
// sentence; the decoder is teacher-forced on the clean sentence and only
// fragment positions are scored.
template <typename T>
std::optional<Tensor<T>> loss_imlm(Model<T>& model, const RegionSet& regions,
                                   const MaskedSample& sample, ForwardCtx<T>& ctx,
                                   double lambda = 1.0) {
    if (sample.strategy != MaskStrategy::fragment) {
        throw std::invalid_argument("loss_imlm: sample was not fragment-corrupted");
    }
    const std::size_t m = sample.original.size();
    if (m < 2) return std::nullopt;

    Tensor<T> region_rows = model.refined_regions(regions);
    Tensor<T> text_rows = model.embed_tokens(sample.corrupted);
    Tensor<T> memory = model.encode(model.assemble_encoder_input(region_rows, text_rows), ctx);

    std::vector<int> dec_in;
    dec_in.reserve(m);
    dec_in.push_back(kBosId);
    dec_in.insert(dec_in.end(), sample.original.begin(), sample.original.end() - 1);
    std::vector<T> weights(m, T(0));
    for (std::size_t i = 0; i < m; ++i) weights[i] = sample.mask_flags[i] ? T(1) : T(0);

    Tensor<T> logits = model.decode(dec_in, memory, ctx);
    return scale(cross_entropy_logits(logits, sample.original, weights), lambda);
}

// Span-denoised full reconstruction: text rows are replaced wholesale by their
// attention mixture over region rows before encoding, and the decoder rebuilds
// the entire sentence (terminator included).
template <typename T>
std::optional<Tensor<T>> loss_ida(Model<T>& model, const RegionSet& regions,
                                  const MaskedSample& sample, ForwardCtx<T>& ctx,
                                  double lambda = 1.0) {
    if (sample.strategy != MaskStrategy::span_single && sample.strategy != MaskStrategy::span_multi) {
        throw std::invalid_argument("loss_ida: sample was not span-corrupted");
    }
    const std::size_t m = sample.original.size();
    if (m < 2) return std::nullopt;

    Tensor<T> region_rows = model.refined_regions(regions);
    Tensor<T> text_embed = model.embed_tokens(sample.corrupted);
    Tensor<T> text_rows = attend_text_to_regions(text_embed, region_rows, model.alignment_weight());
    Tensor<T> memory = model.encode(model.assemble_encoder_input(region_rows, text_rows), ctx);

    std::vector<int> dec_in;
    dec_in.reserve(m + 1);
    dec_in.push_back(kBosId);
    dec_in.insert(dec_in.end(), sample.original.begin(), sample.original.end());
    std::vector<int> targets(sample.original);
    targets.push_back(kEosId);
    std::vector<T> weights(targets.size(), T(1));

    Tensor<T> logits = model.decode(dec_in, memory, ctx);
    return scale(cross_entropy_logits(logits, targets, weights), lambda);
}

// Core of the region-feature regression: encode the caption alone, decode one
// learned query per target row non-causally, and regress the head output onto
// `target`, which is treated as a constant (no gradient flows into whatever
// produced it).
template <typename T>
Tensor<T> loss_tifg_toward(Model<T>& model, const Tensor<T>& target,
                           const std::vector<int>& caption, ForwardCtx<T>& ctx,
                           double lambda = 1.0) {
    const std::size_t n = target.shape()[0];
    Tensor<T> text_rows = model.embed_tokens(caption);
    Tensor<T> memory = model.encode(model.assemble_encoder_input(std::nullopt, text_rows), ctx);
    Tensor<T> queries = model.tifg_queries(n);
    Tensor<T> hidden = model.decode_hidden(queries, memory, /*causal=*/false, ctx);
    Tensor<T> predicted = model.tifg_head(hidden);
    return scale(mse(predicted, target.detach()), lambda);
}

// Region-feature regression with the target taken from the model's own
// pre-refinement region projection, frozen at its current value.
template <typename T>
std::optional<Tensor<T>> loss_tifg(Model<T>& model, const RegionSet& regions,
                                   const std::vector<int>& caption, ForwardCtx<T>& ctx,
                                   double lambda = 1.0) {
    if (caption.empty()) return std::nullopt;
    Tensor<T> target = model.project_regions(regions).detach();
    return loss_tifg_toward(model, target, caption, ctx, lambda);
}

} // namespace xgpt
