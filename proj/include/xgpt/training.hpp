#pragma once

// Multi-task training: warmup/decay learning-rate schedule, Adam with a
// non-finite gradient abort, round-robin per-task optimizer steps, and a stage
// driver that writes metrics.log, checkpoints.tsv, and periodic snapshots.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "xgpt/checkpoint.hpp"
#include "xgpt/corruption.hpp"
#include "xgpt/decoding.hpp"
#include "xgpt/model.hpp"
#include "xgpt/objectives.hpp"

namespace xgpt {

// Linear warmup to the peak, then inverse-square-root decay, clamped to
// [floor_lr, peak].  Steps are 1-based.
struct LRSchedule {
    double peak = 1e-4;
    double floor_lr = 2e-5;
    std::size_t warmup = 500;

    double lr_at(std::size_t step) const {
        if (step == 0) throw std::invalid_argument("lr_at: steps are 1-based");
        const double w = static_cast<double>(std::max<std::size_t>(1, warmup));
        const double s = static_cast<double>(step);
        const double raw = peak * std::min(s / w, std::sqrt(w / s));
        return std::min(peak, std::max(floor_lr, raw));
    }

    static LRSchedule constant(double lr) { return LRSchedule{lr, lr, 1}; }
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    std::size_t step_count = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// One optimizer step over every parameter.  Gradients are validated in a first
// pass so a non-finite gradient aborts before any state is touched.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState& state, double lr) {
    for (auto& [name, p] : store.entries()) {
        for (const T& g : p.grad()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw std::runtime_error("adam_step: non-finite gradient in '" + name + "'");
            }
        }
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (auto& [name, p] : store.entries()) {
        std::vector<double>& m = state.m[name];
        std::vector<double>& v = state.v[name];
        if (m.empty()) m.assign(p.size(), 0.0);
        if (v.empty()) v.assign(p.size(), 0.0);
        auto& w = p.values();
        auto& g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// ------------------------------------------------------------ training data

struct TrainExample {
    std::uint64_t uid = 0;
    RegionSet regions;
    std::vector<int> caption;  // word ids, no [BOS]/[EOS]
};

using Dataset = std::vector<TrainExample>;

inline std::vector<std::size_t> sample_batch(std::size_t dataset_size, std::size_t batch_size,
                                             std::uint64_t seed, std::size_t iter) {
    if (dataset_size == 0) throw std::invalid_argument("sample_batch: empty dataset");
    RngStream rng(seed, iter, "batch");
    std::vector<std::size_t> idx(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        idx[i] = static_cast<std::size_t>(rng.next_below(dataset_size));
    }
    return idx;
}

// ------------------------------------------------------- one training round

// Each task with nonzero weight gets its own optimizer step, in a fixed task
// order.  Per-example graphs are built and backpropagated one at a time, so
// batch memory stays flat; each example's gradient carries weight
// lambda / batch_size.  Returns the per-task batch losses that were stepped.
template <typename T>
std::map<Task, double> train_iteration(Model<T>& model, const Dataset& data,
                                       const std::vector<std::size_t>& batch, std::size_t iter,
                                       std::uint64_t seed, const LossWeights& weights,
                                       AdamState& adam, double lr, const Vocabulary& vocab,
                                       bool ida_single_mask = true) {
    std::map<Task, double> losses;
    for (Task task : all_tasks()) {
        const double lambda = weights.of(task);
        if (lambda == 0.0) continue;
        model.params().zero_grad();
        double total = 0.0;
        std::size_t contributed = 0;
        for (std::size_t idx : batch) {
            const TrainExample& ex = data.at(idx);
            const std::string tag = task_name(task) + "@" + std::to_string(iter);
            RngStream drop_rng(seed, ex.uid, "drop:" + tag);
            ForwardCtx<T> ctx{/*training=*/true, &drop_rng};

            std::optional<Tensor<T>> loss;
            if (task == Task::ic) {
                loss = loss_ic(model, ex.regions, ex.caption, ctx, lambda);
            } else if (task == Task::imlm) {
                RngStream mask_rng(seed, ex.uid, "mask:" + tag);
                auto sample = sample_fragment(ex.caption, mask_rng, vocab);
                if (sample) loss = loss_imlm(model, ex.regions, *sample, ctx, lambda);
            } else if (task == Task::ida) {
                RngStream mask_rng(seed, ex.uid, "mask:" + tag);
                auto sample = sample_spans(ex.caption, mask_rng, ida_single_mask, vocab);
                if (sample) loss = loss_ida(model, ex.regions, *sample, ctx, lambda);
            } else {
                loss = loss_tifg(model, ex.regions, ex.caption, ctx, lambda);
            }
            if (!loss) continue;
            const double value = static_cast<double>(loss->item());
            if (!std::isfinite(value)) {
                throw std::runtime_error("train_iteration: non-finite " + task_name(task) +
                                         " loss at step " + std::to_string(iter));
            }
            total += value;
            contributed += 1;
            Tensor<T> scaled = scale(*loss, T(1) / static_cast<T>(batch.size()));
            backward(scaled);
        }
        if (contributed == 0) continue;
        adam_step(model.params(), adam, lr);
        losses[task] = total / static_cast<double>(batch.size());
    }
    return losses;
}

// ---------------------------------------------------------------- evaluation

template <typename T>
double evaluate_ic_loss(Model<T>& model, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("evaluate_ic_loss: empty dataset");
    NoGradGuard off;
    double total = 0.0;
    std::size_t n = 0;
    for (const TrainExample& ex : data) {
        ForwardCtx<T> ctx;
        auto loss = loss_ic(model, ex.regions, ex.caption, ctx, 1.0);
        if (!loss) continue;
        total += static_cast<double>(loss->item());
        n += 1;
    }
    if (n == 0) throw std::runtime_error("evaluate_ic_loss: no example produced a loss");
    return total / static_cast<double>(n);
}

template <typename T>
double exact_match_rate(Model<T>& model, const Dataset& data, std::size_t beam_width = 1) {
    if (data.empty()) throw std::invalid_argument("exact_match_rate: empty dataset");
    std::size_t hits = 0;
    for (const TrainExample& ex : data) {
        Hypothesis hyp = caption_regions(model, ex.regions, beam_width);
        if (hyp.tokens == ex.caption) hits += 1;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// -------------------------------------------------------------- stage driver

struct StagePlan {
    std::string name = "stage";
    LossWeights weights = LossWeights::uniform();
    LRSchedule schedule;
    std::size_t iterations = 100;
    std::size_t batch_size = 8;
    std::size_t val_interval = 50;        // 0 disables validation lines
    std::size_t checkpoint_interval = 0;  // 0 saves only the final snapshot
    std::uint64_t seed = 1;
    bool ida_single_mask = true;
};

struct ValPoint {
    std::size_t step;
    double ic_loss;
    double exact_match;
};

struct StageResult {
    std::vector<ValPoint> val_history;
    std::string final_checkpoint;
};

namespace detail {

inline std::string format_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace detail

// Runs one training stage.  In out_dir it appends metrics.log (task lines
// "step<TAB>task<TAB>loss", validation lines "step<TAB>loss<TAB>match") and
// checkpoints.tsv ("file<TAB>step<TAB>val_loss"), plus the snapshot files the
// tsv names.
template <typename T>
StageResult run_stage(Model<T>& model, const Dataset& train, const Dataset& val,
                      const Vocabulary& vocab, const StagePlan& plan, const std::string& out_dir) {
    if (plan.iterations == 0) throw std::invalid_argument("run_stage: zero iterations");
    if (plan.batch_size == 0) throw std::invalid_argument("run_stage: zero batch size");
    std::filesystem::create_directories(out_dir);
    std::ofstream metrics(out_dir + "/metrics.log", std::ios::app);
    if (!metrics) throw std::runtime_error("run_stage: cannot open " + out_dir + "/metrics.log");
    std::ofstream ckpt_index(out_dir + "/checkpoints.tsv", std::ios::app);
    if (!ckpt_index) throw std::runtime_error("run_stage: cannot open " + out_dir + "/checkpoints.tsv");

    AdamState adam;
    StageResult result;

    auto save_snapshot = [&](std::size_t step) {
        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_%06zu.bin", step);
        write_checkpoint(out_dir + "/" + name, snapshot(model.params()));
        const double val_loss = evaluate_ic_loss(model, val);
        ckpt_index << name << '\t' << step << '\t' << detail::format_fixed(val_loss) << '\n';
        ckpt_index.flush();
        result.final_checkpoint = out_dir + "/" + name;
    };

    for (std::size_t iter = 1; iter <= plan.iterations; ++iter) {
        const double lr = plan.schedule.lr_at(iter);
        const auto batch = sample_batch(train.size(), plan.batch_size, plan.seed, iter);
        const auto losses = train_iteration(model, train, batch, iter, plan.seed, plan.weights,
                                            adam, lr, vocab, plan.ida_single_mask);
        for (const auto& [task, loss] : losses) {
            metrics << iter << '\t' << task_name(task) << '\t' << detail::format_fixed(loss) << '\n';
        }
        if (plan.val_interval != 0 && iter % plan.val_interval == 0) {
            const double val_loss = evaluate_ic_loss(model, val);
            const double match = exact_match_rate(model, val);
            metrics << iter << '\t' << detail::format_fixed(val_loss) << '\t'
                    << detail::format_fixed(match) << '\n';
            metrics.flush();
            result.val_history.push_back(ValPoint{iter, val_loss, match});
        }
        if (plan.checkpoint_interval != 0 && iter % plan.checkpoint_interval == 0) {
            save_snapshot(iter);
        }
    }
    if (result.final_checkpoint.empty() || plan.checkpoint_interval == 0 ||
        plan.iterations % plan.checkpoint_interval != 0) {
        save_snapshot(plan.iterations);
    }
    return result;
}

} // namespace xgpt
