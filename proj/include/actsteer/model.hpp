#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actsteer/rng.hpp"
#include "actsteer/tensor.hpp"
#include "actsteer/transport.hpp"

namespace actsteer {

enum class BlockKind { linear, layernorm, tanh_block, gelu_block, relu_block };

std::string block_kind_name(BlockKind kind);
BlockKind block_kind_from_name(const std::string& name);

/// One frozen stage of the network. Parameters are never updated.
///   linear:    weight (in_dim x out_dim), bias (1 x out_dim)
///   layernorm: gain, bias (1 x dim), eps
///   tanh/gelu/relu: no parameters, in_dim == out_dim
struct LayerBlock {
    BlockKind kind = BlockKind::linear;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Tensor weight;
    Tensor bias;
    double eps = 1e-5;

    static LayerBlock linear(Tensor weight, Tensor bias);
    static LayerBlock layer_norm(Tensor gain, Tensor bias, double eps);
    static LayerBlock elementwise(BlockKind kind, std::size_t dim);
    void validate(const std::string& where) const;
};

/// Frozen feed-forward stack with marked hook points. An intervention
/// attaches after each hooked block; the final block is never hooked.
struct FrozenModel {
    std::vector<LayerBlock> blocks;
    std::vector<std::size_t> hooks;  // strictly increasing block indices

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::vector<std::size_t> hook_dims() const;
    void validate() const;
};

/// Per-hook activation matrices captured by a forward pass; all matrices
/// share one row count.
struct ActivationTrace {
    std::vector<Tensor> per_hook;

    std::size_t rows() const { return per_hook.empty() ? 0 : per_hook.front().rows; }
    ActivationTrace detached() const;
    void validate_layout(const ActivationTrace& other) const;
};

struct ForwardResult {
    Tensor output;
    ActivationTrace trace;
};

/// Runs the frozen blocks over x (rows = samples). At each hook the matching
/// transport entry is applied and the post-transport activation is recorded
/// in the trace; pass nullptr for a clean (unintervened) run. Gradients flow
/// only through transport parameters that are tape leaves.
ForwardResult forward_with_hooks(const FrozenModel& model,
                                 const std::vector<HookParams>* transports,
                                 const Tensor& x);

/// Same, with maps taken at the given strength: each hook applies
/// (1-lambda) z + lambda (omega z + b). lambda = 0 is bitwise the clean run.
ForwardResult forward_with_stack(const FrozenModel& model, const TransportStack& stack,
                                 const Tensor& x, double lambda = 1.0);

/// Clean per-hook activations of y, cached once and reused across steps.
ActivationTrace precompute_targets(const FrozenModel& model, const Tensor& y_samples);

enum class Nonlinearity { tanh_kind, gelu_kind, relu_kind };
Nonlinearity nonlinearity_from_name(const std::string& name);

/// hook placement: after every layernorm block (default), or an explicit
/// block-index list.
struct HookPolicy {
    bool post_layernorm = true;
    std::vector<std::size_t> explicit_hooks;
};

/// Builds depth-1 stages of [linear, nonlinearity, layernorm] followed by one
/// final linear block. widths[0] is the input width and widths[i] the width
/// after stage i, so widths must have `depth` entries. Linear weights are
/// drawn Normal(0, 1/fan_in) from the seeded generator, linear biases are 0,
/// norm gain/bias are 1/0. Under the default policy each layernorm is hooked,
/// giving depth-1 hooks.
FrozenModel generate_synthetic(std::uint64_t seed, std::size_t depth,
                               const std::vector<std::size_t>& widths,
                               const HookPolicy& policy, Nonlinearity nonlinearity);

json model_to_json(const FrozenModel& model);
FrozenModel model_from_json(const json& j, const std::string& where);
void save_model(const std::string& path, const FrozenModel& model);
FrozenModel load_model(const std::string& path);

}  // namespace actsteer
