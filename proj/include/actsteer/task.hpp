#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "actsteer/io.hpp"
#include "actsteer/model.hpp"
#include "actsteer/transport.hpp"

namespace actsteer {

struct ModelSpec {
    std::uint64_t seed = 0;
    std::size_t depth = 4;
    std::vector<std::size_t> widths;
    std::string nonlinearity = "tanh";
    bool post_layernorm = true;
    std::vector<std::size_t> explicit_hooks;  // used when !post_layernorm
};

/// Hidden sparse affine map inserted at one hook when producing the target
/// activations. Scales are drawn as offsets off 1 (omega = 1 + U[scale_lo,
/// scale_hi]), shifts off 0, on a seeded random coordinate subset.
///
/// magnitude_decades > 0 additionally damps each planted coordinate's offset
/// and shift by a shared factor 10^-U[0, magnitude_decades], spreading effect
/// sizes log-uniformly so a regularization sweep prunes them incrementally
/// instead of all at once.
struct PlantedSpec {
    std::size_t hook_index = 0;
    std::size_t support_size = 0;
    double scale_lo = -0.5;
    double scale_hi = 0.5;
    double shift_lo = -1.0;
    double shift_hi = 1.0;
    double magnitude_decades = 0.0;
    std::uint64_t plant_seed = 0;
};

struct TaskSpec {
    ModelSpec model;
    std::uint64_t data_seed = 0;
    std::size_t n_train = 256;
    std::size_t n_heldout = 256;
    std::string input_dist = "gaussian";
    /// true: target activations come from the same inputs as the source side
    /// (the planted map is then exactly attainable); false: fresh draws.
    bool paired_targets = true;
    std::optional<PlantedSpec> planted;
};

json task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const json& j, const std::string& where);

/// Materializes a task directory:
///   model.json         the frozen model
///   data.json          train/heldout source samples + target traces
///   ground_truth.json  the planted stack, checkpoint format — sealed: only
///                      scoring reads it, never training
///   task.json          spec echo, file names, model hash, hook dims
void gen_task(const TaskSpec& spec, const std::string& out_dir);

/// Everything training and evaluation may see. Deliberately excludes the
/// ground-truth file.
struct TaskBundle {
    TaskSpec spec;
    FrozenModel model;
    std::uint64_t model_hash = 0;
    std::string model_path;
    Tensor train_source;
    Tensor heldout_source;
    ActivationTrace train_target;
    ActivationTrace heldout_target;
};

TaskBundle load_task(const std::string& dir);
TransportStack load_ground_truth(const std::string& dir);

json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const json& j, const std::string& where);

}  // namespace actsteer
