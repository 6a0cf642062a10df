#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actsteer/loss.hpp"
#include "actsteer/model.hpp"
#include "actsteer/transport.hpp"

namespace actsteer {

enum class LrSchedule { cosine, constant };
enum class ProxScaling { standard, literal };

LrSchedule lr_schedule_from_name(const std::string& name);
ProxScaling prox_scaling_from_name(const std::string& name);
std::string lr_schedule_name(LrSchedule s);
std::string prox_scaling_name(ProxScaling s);

struct TrainConfig {
    double gamma = 0.0;
    double lambda1 = 1.0;
    double lambdaG = 1.0;
    double lr0 = 0.1;
    long steps = 1000;
    long batch = 32;
    std::uint64_t seed = 0;
    long refit_steps = 0;
    LrSchedule lr_schedule = LrSchedule::cosine;
    /// standard: prox thresholds rho_t * gamma * lambda1 and
    ///           rho_t * gamma * lambdaG * sqrt(d)  (textbook scaling)
    /// literal:  gamma * lambda1 and gamma * lambdaG, LR-independent
    ProxScaling prox_scaling = ProxScaling::standard;

    void validate() const;  // steps >= 1, batch >= 2, lr0 > 0, weights >= 0
};

struct StepRecord {
    long step = 0;
    double lr = 0.0;
    double total_cost = 0.0;  // minibatch cost of the step's forward pass
    std::vector<double> per_layer_delta;
    double r1 = 0.0;          // regularizers of the post-update stack
    double rg = 0.0;
    std::size_t support = 0;  // exact (tolerance 0) support post-update
    double wall_time = 0.0;   // seconds; in-memory only, never serialized
};

struct RunMetrics {
    std::vector<StepRecord> records;
    std::size_t hook_count = 0;

    /// Header: step,lr,total_cost,delta_l0..delta_l{K},r1,rg,support.
    /// Deterministic formatting (%.17g), so equal runs give equal bytes.
    std::string to_csv() const;
    json to_json() const;  // same fields as the CSV
};

/// Elementwise sign(z) max(|z| - tau, 0); entries at or below tau become
/// exactly 0.
std::vector<double> soft_threshold(const std::vector<double>& z, double tau);

/// (1 - tau/|z|_2)+ z; the whole vector becomes exactly 0 when |z|_2 <= tau.
std::vector<double> group_prox(const std::vector<double>& z, double tau);

/// Step-t learning rate over a phase of `phase_steps` steps:
/// cosine lr0/2 (1 + cos(pi t / phase)), or constant lr0.
double lr_at(double lr0, LrSchedule schedule, long t, long phase_steps);

/// One proximal SGD step, in place on `transports`:
///   1. forward source_batch with the current maps, cost against
///      target_batch, backprop into map parameters;
///   2. gradient step at lr_at(config, step_index);
///   3. per hook, re-centered shrinkage omega <- prox(omega - 1) + 1 and
///      bias <- prox(bias), thresholds per config.prox_scaling (skipped
///      when gamma is 0).
/// `active` (optional, per hook, per coordinate) pins inactive coordinates
/// to exact identity — the refit phase's hard freeze.
/// Non-finite gradients abort with a numeric_error carrying step_index and
/// a diagnostic dump.
/// The returned breakdown has the step's minibatch cost plus the
/// post-update regularizers and objective.
LossBreakdown train_step(const FrozenModel& model, TransportStack& transports,
                         const Tensor& source_batch, const ActivationTrace& target_batch,
                         const TrainConfig& config, long step_index,
                         const std::vector<std::vector<char>>* active = nullptr);

struct TrainResult {
    TransportStack stack;
    RunMetrics metrics;
};

/// Full training run against a precomputed target trace: seeded epoch-wise
/// minibatch sampling without replacement (reshuffle when a full batch no
/// longer fits; the remainder is dropped), config.steps proximal steps, then
/// refit_steps plain SGD steps restricted to the surviving support under a
/// fresh cosine phase.
TrainResult train_on_trace(const FrozenModel& model, const Tensor& source_samples,
                           const ActivationTrace& target_trace, const TrainConfig& config);

/// Convenience: precomputes the clean target trace of target_samples first.
TrainResult train(const FrozenModel& model, const Tensor& source_samples,
                  const Tensor& target_samples, const TrainConfig& config);

json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const json& j, const std::string& where);

}  // namespace actsteer
