#pragma once

#include "actsteer/loss.hpp"
#include "actsteer/model.hpp"
#include "actsteer/transport.hpp"

namespace actsteer {

/// Per-hook shift by the difference of means: omega = 1 everywhere,
/// bias = column mean(target trace) - column mean(clean source trace).
/// Both sides are estimated on unintervened activations.
TransportStack fit_mean_shift(const FrozenModel& model, const Tensor& source_samples,
                              const ActivationTrace& target_trace);
TransportStack fit_mean_shift(const FrozenModel& model, const Tensor& source_samples,
                              const Tensor& target_samples);

enum class AffineFitKind {
    /// Least squares between sorted source and sorted target columns — the
    /// exact affine minimizer of the rank-paired squared distance.
    order_stats_lsq,
    /// Match mean and standard deviation instead (sensitivity variant).
    moment_match,
};

/// Hooks fitted in order; the maps already fitted at hooks < h are inserted
/// when computing hook h's source activations, then each coordinate gets an
/// independent 1-D affine fit of source onto target. Columns with (near-)
/// zero source variance fall back to omega = 1, bias = mean difference.
/// Requires at least 2 rows on both sides.
TransportStack fit_sequential_affine(const FrozenModel& model, const Tensor& source_samples,
                                     const ActivationTrace& target_trace,
                                     AffineFitKind fit = AffineFitKind::order_stats_lsq);
TransportStack fit_sequential_affine(const FrozenModel& model, const Tensor& source_samples,
                                     const Tensor& target_samples,
                                     AffineFitKind fit = AffineFitKind::order_stats_lsq);

struct EvalReport {
    LossBreakdown loss;     // objective field equals total_cost (no gamma here)
    SupportReport support_report;
};

/// Shared scorer for trained and baseline stacks alike: inserts the stack at
/// the given strength over heldout_source and scores the resulting trace
/// against heldout_target.
EvalReport evaluate(const TransportStack& stack, const FrozenModel& model,
                    const Tensor& heldout_source, const ActivationTrace& heldout_target,
                    double lambda = 1.0);
EvalReport evaluate(const TransportStack& stack, const FrozenModel& model,
                    const Tensor& heldout_source, const Tensor& heldout_target_samples,
                    double lambda = 1.0);

}  // namespace actsteer
