#pragma once

// Central finite-difference verification of analytic gradients.  The loss
// closure is re-evaluated with individual parameter entries nudged by +/-step;
// value-only evaluation (autograd disabled) keeps the sweep cheap.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "xgpt/tensor.hpp"

namespace xgpt {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

struct GradCheckReport {
    bool loss_finite = true;
    double loss_value = 0.0;
    std::vector<GradCheckEntry> entries;

    double max_rel_err() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_err);
        return m;
    }
    bool ok(double tol) const { return loss_finite && max_rel_err() <= tol; }
};

// Relative error with a floored denominator.  Central differences at step h
// carry cancellation noise of roughly eps * |loss| / h (~1e-11 for unit-scale
// losses at h = 1e-5), so when the true derivative is ~0 — e.g. a bias added
// uniformly to every attention key, which softmax normalization cancels — both
// sides are pure float noise.  The 1e-6 floor keeps such entries from
// reporting noise/noise as a large "relative" error while leaving the plain
// relative-error semantics intact for any gradient of magnitude >= 1e-6.
inline double rel_err(double analytic, double numeric) {
    return std::fabs(analytic - numeric) /
           std::max(1e-6, std::fabs(analytic) + std::fabs(numeric));
}

// `loss_fn` must rebuild its graph from the current parameter values on every
// call and return a scalar tensor.  `params` are (name, tensor) pairs whose
// entries are swept; tensors must require gradients.
inline GradCheckReport gradcheck(const std::function<Tensor<double>()>& loss_fn,
                                 const std::vector<std::pair<std::string, Tensor<double>>>& params,
                                 double step = 1e-5) {
    GradCheckReport report;

    for (const auto& [name, p] : params) {
        if (!p.requires_grad()) {
            throw std::invalid_argument("gradcheck: parameter '" + name + "' does not require grad");
        }
        const_cast<Tensor<double>&>(p).zero_grad();
    }

    Tensor<double> loss = loss_fn();
    report.loss_value = loss.item();
    if (!std::isfinite(report.loss_value)) {
        report.loss_finite = false;
        return report;
    }
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        analytic.push_back(const_cast<Tensor<double>&>(p).grad());
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& name = params[pi].first;
        auto& tensor_values = const_cast<Tensor<double>&>(params[pi].second).values();
        GradCheckEntry entry;
        entry.name = name;
        for (std::size_t i = 0; i < tensor_values.size(); ++i) {
            const double saved = tensor_values[i];
            double f_plus, f_minus;
            {
                NoGradGuard ng;
                tensor_values[i] = saved + step;
                f_plus = loss_fn().item();
                tensor_values[i] = saved - step;
                f_minus = loss_fn().item();
            }
            tensor_values[i] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
                report.loss_finite = false;
                entry.max_rel_err = std::numeric_limits<double>::infinity();
                entry.worst_index = i;
                break;
            }
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double e = rel_err(analytic[pi][i], numeric);
            if (e > entry.max_rel_err) {
                entry.max_rel_err = e;
                entry.worst_index = i;
                entry.analytic_at_worst = analytic[pi][i];
                entry.numeric_at_worst = numeric;
            }
        }
        report.entries.push_back(std::move(entry));
        if (!report.loss_finite) break;
    }
    return report;
}

} // namespace xgpt
