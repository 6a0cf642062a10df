#include "actsteer/model.hpp"

#include <algorithm>
#include <cmath>

#include "actsteer/io.hpp"

namespace actsteer {

std::string block_kind_name(BlockKind kind) {
    switch (kind) {
        case BlockKind::linear: return "linear";
        case BlockKind::layernorm: return "layernorm";
        case BlockKind::tanh_block: return "tanh";
        case BlockKind::gelu_block: return "gelu";
        case BlockKind::relu_block: return "relu";
    }
    throw config_error("unknown block kind");
}

BlockKind block_kind_from_name(const std::string& name) {
    if (name == "linear") return BlockKind::linear;
    if (name == "layernorm") return BlockKind::layernorm;
    if (name == "tanh") return BlockKind::tanh_block;
    if (name == "gelu") return BlockKind::gelu_block;
    if (name == "relu") return BlockKind::relu_block;
    throw config_error("unknown block kind '" + name + "'");
}

LayerBlock LayerBlock::linear(Tensor weight, Tensor bias) {
    LayerBlock b;
    b.kind = BlockKind::linear;
    b.in_dim = weight.rows;
    b.out_dim = weight.cols;
    b.weight = std::move(weight);
    b.bias = std::move(bias);
    b.validate("LayerBlock::linear");
    return b;
}

LayerBlock LayerBlock::layer_norm(Tensor gain, Tensor bias, double eps) {
    LayerBlock b;
    b.kind = BlockKind::layernorm;
    b.in_dim = gain.cols;
    b.out_dim = gain.cols;
    b.weight = std::move(gain);
    b.bias = std::move(bias);
    b.eps = eps;
    b.validate("LayerBlock::layer_norm");
    return b;
}

LayerBlock LayerBlock::elementwise(BlockKind kind, std::size_t dim) {
    if (kind != BlockKind::tanh_block && kind != BlockKind::gelu_block &&
        kind != BlockKind::relu_block) {
        throw config_error("LayerBlock::elementwise: kind must be tanh/gelu/relu");
    }
    LayerBlock b;
    b.kind = kind;
    b.in_dim = dim;
    b.out_dim = dim;
    return b;
}

void LayerBlock::validate(const std::string& where) const {
    switch (kind) {
        case BlockKind::linear:
            if (weight.rows != in_dim || weight.cols != out_dim) {
                throw shape_error(where + ": weight is " + std::to_string(weight.rows) + "x" +
                                  std::to_string(weight.cols) + ", expected " +
                                  std::to_string(in_dim) + "x" + std::to_string(out_dim));
            }
            if (bias.rows != 1 || bias.cols != out_dim) {
                throw shape_error(where + ": bias must be 1x" + std::to_string(out_dim));
            }
            break;
        case BlockKind::layernorm:
            if (in_dim != out_dim) throw shape_error(where + ": in_dim != out_dim");
            if (weight.rows != 1 || weight.cols != out_dim ||
                bias.rows != 1 || bias.cols != out_dim) {
                throw shape_error(where + ": gain/bias must be 1x" + std::to_string(out_dim));
            }
            if (!(eps > 0.0)) throw config_error(where + ": eps must be > 0");
            break;
        default:
            if (in_dim != out_dim) throw shape_error(where + ": in_dim != out_dim");
            break;
    }
}

std::size_t FrozenModel::input_dim() const {
    if (blocks.empty()) throw config_error("FrozenModel: no blocks");
    return blocks.front().in_dim;
}

std::size_t FrozenModel::output_dim() const {
    if (blocks.empty()) throw config_error("FrozenModel: no blocks");
    return blocks.back().out_dim;
}

std::vector<std::size_t> FrozenModel::hook_dims() const {
    std::vector<std::size_t> dims;
    dims.reserve(hooks.size());
    for (std::size_t h : hooks) dims.push_back(blocks[h].out_dim);
    return dims;
}

void FrozenModel::validate() const {
    if (blocks.empty()) throw config_error("FrozenModel: no blocks");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].validate("blocks[" + std::to_string(i) + "]");
        if (i > 0 && blocks[i].in_dim != blocks[i - 1].out_dim) {
            throw shape_error("blocks[" + std::to_string(i) + "]: in_dim " +
                              std::to_string(blocks[i].in_dim) + " != previous out_dim " +
                              std::to_string(blocks[i - 1].out_dim));
        }
    }
    for (std::size_t i = 0; i < hooks.size(); ++i) {
        if (i > 0 && hooks[i] <= hooks[i - 1]) {
            throw config_error("hooks must be strictly increasing");
        }
        if (hooks[i] + 1 >= blocks.size()) {
            throw config_error("hooks[" + std::to_string(i) + "] = " +
                               std::to_string(hooks[i]) +
                               " is out of range (the final block cannot be hooked)");
        }
    }
}

ActivationTrace ActivationTrace::detached() const {
    ActivationTrace out;
    out.per_hook.reserve(per_hook.size());
    for (const Tensor& t : per_hook) out.per_hook.push_back(t.detached());
    return out;
}

void ActivationTrace::validate_layout(const ActivationTrace& other) const {
    if (per_hook.size() != other.per_hook.size()) {
        throw shape_error("traces have different hook counts");
    }
    for (std::size_t h = 0; h < per_hook.size(); ++h) {
        if (!per_hook[h].same_shape(other.per_hook[h])) {
            throw shape_error("traces differ in shape at hook " + std::to_string(h));
        }
    }
}

namespace {

Tensor apply_block(const LayerBlock& block, const Tensor& z) {
    switch (block.kind) {
        case BlockKind::linear: return add(matmul(z, block.weight), block.bias);
        case BlockKind::layernorm: return layernorm(z, block.weight, block.bias, block.eps);
        case BlockKind::tanh_block: return tanh_t(z);
        case BlockKind::gelu_block: return gelu(z);
        case BlockKind::relu_block: return relu(z);
    }
    throw config_error("unknown block kind");
}

template <typename ApplyAtHook>
ForwardResult run_forward(const FrozenModel& model, const Tensor& x, ApplyAtHook&& at_hook) {
    if (x.cols != model.input_dim()) {
        throw config_error("forward: input width " + std::to_string(x.cols) +
                           " != model input width " + std::to_string(model.input_dim()));
    }
    ForwardResult res;
    res.trace.per_hook.reserve(model.hooks.size());
    Tensor z = x;
    std::size_t next_hook = 0;
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        z = apply_block(model.blocks[i], z);
        if (next_hook < model.hooks.size() && model.hooks[next_hook] == i) {
            z = at_hook(next_hook, z);
            res.trace.per_hook.push_back(z);
            ++next_hook;
        }
    }
    res.output = z;
    return res;
}

}  // namespace

ForwardResult forward_with_hooks(const FrozenModel& model,
                                 const std::vector<HookParams>* transports,
                                 const Tensor& x) {
    if (transports != nullptr && transports->size() != model.hooks.size()) {
        throw config_error("forward: " + std::to_string(transports->size()) +
                           " transports for " + std::to_string(model.hooks.size()) + " hooks");
    }
    return run_forward(model, x, [&](std::size_t h, const Tensor& z) {
        return transports == nullptr ? z : apply((*transports)[h], z);
    });
}

ForwardResult forward_with_stack(const FrozenModel& model, const TransportStack& stack,
                                 const Tensor& x, double lambda) {
    if (stack.hook_count() != model.hooks.size()) {
        throw config_error("forward: stack has " + std::to_string(stack.hook_count()) +
                           " maps for " + std::to_string(model.hooks.size()) + " hooks");
    }
    return run_forward(model, x, [&](std::size_t h, const Tensor& z) {
        return apply_with_strength(stack.maps[h], z, lambda);
    });
}

ActivationTrace precompute_targets(const FrozenModel& model, const Tensor& y_samples) {
    return forward_with_hooks(model, nullptr, y_samples).trace;
}

Nonlinearity nonlinearity_from_name(const std::string& name) {
    if (name == "tanh") return Nonlinearity::tanh_kind;
    if (name == "gelu") return Nonlinearity::gelu_kind;
    if (name == "relu") return Nonlinearity::relu_kind;
    throw config_error("unknown nonlinearity '" + name + "'");
}

FrozenModel generate_synthetic(std::uint64_t seed, std::size_t depth,
                               const std::vector<std::size_t>& widths,
                               const HookPolicy& policy, Nonlinearity nonlinearity) {
    if (depth < 2) throw config_error("generate_synthetic: depth must be >= 2");
    if (widths.size() != depth) {
        throw config_error("generate_synthetic: expected " + std::to_string(depth) +
                           " widths, got " + std::to_string(widths.size()));
    }
    for (std::size_t w : widths)
        if (w == 0) throw config_error("generate_synthetic: widths must be positive");

    const BlockKind nl = nonlinearity == Nonlinearity::tanh_kind   ? BlockKind::tanh_block
                         : nonlinearity == Nonlinearity::gelu_kind ? BlockKind::gelu_block
                                                                   : BlockKind::relu_block;
    Rng rng(seed);
    auto random_linear = [&](std::size_t in, std::size_t out) {
        const double scale = std::sqrt(1.0 / static_cast<double>(in));
        Tensor w = Tensor::zeros(in, out);
        for (std::size_t r = 0; r < in; ++r)
            for (std::size_t c = 0; c < out; ++c) w.at(r, c) = rng.normal() * scale;
        return LayerBlock::linear(std::move(w), Tensor::zeros(1, out));
    };

    FrozenModel model;
    for (std::size_t i = 1; i < depth; ++i) {
        model.blocks.push_back(random_linear(widths[i - 1], widths[i]));
        model.blocks.push_back(LayerBlock::elementwise(nl, widths[i]));
        model.blocks.push_back(LayerBlock::layer_norm(
            Tensor::full(1, widths[i], 1.0), Tensor::zeros(1, widths[i]), 1e-5));
    }
    model.blocks.push_back(random_linear(widths[depth - 1], widths[depth - 1]));

    if (policy.post_layernorm) {
        for (std::size_t i = 0; i < model.blocks.size(); ++i)
            if (model.blocks[i].kind == BlockKind::layernorm) model.hooks.push_back(i);
    } else {
        model.hooks = policy.explicit_hooks;
    }
    model.validate();
    return model;
}

json model_to_json(const FrozenModel& model) {
    model.validate();
    json blocks = json::array();
    for (const LayerBlock& b : model.blocks) {
        json jb;
        jb["kind"] = block_kind_name(b.kind);
        switch (b.kind) {
            case BlockKind::linear:
                jb["in_dim"] = b.in_dim;
                jb["out_dim"] = b.out_dim;
                jb["weight"] = b.weight.data;
                jb["bias"] = b.bias.data;
                break;
            case BlockKind::layernorm:
                jb["dim"] = b.out_dim;
                jb["gain"] = b.weight.data;
                jb["bias"] = b.bias.data;
                jb["eps"] = b.eps;
                break;
            default:
                jb["dim"] = b.out_dim;
                break;
        }
        blocks.push_back(std::move(jb));
    }
    json j;
    j["version"] = 1;
    j["blocks"] = blocks;
    j["hooks"] = model.hooks;
    return j;
}

FrozenModel model_from_json(const json& j, const std::string& where) {
    const auto version = require_int(j, "version", where);
    if (version != 1) throw io_error(where + ": unknown version " + std::to_string(version));
    const json& blocks = require_field(j, "blocks", where);
    if (!blocks.is_array()) throw io_error(where + ": field 'blocks' is not an array");

    FrozenModel model;
    try {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string ctx = where + ": blocks[" + std::to_string(i) + "]";
            const BlockKind kind = block_kind_from_name(require_string(blocks[i], "kind", ctx));
            switch (kind) {
                case BlockKind::linear: {
                    const auto in = static_cast<std::size_t>(require_int(blocks[i], "in_dim", ctx));
                    const auto out =
                        static_cast<std::size_t>(require_int(blocks[i], "out_dim", ctx));
                    auto wv = require_doubles(blocks[i], "weight", ctx);
                    auto bv = require_doubles(blocks[i], "bias", ctx);
                    if (wv.size() != in * out) {
                        throw io_error(ctx + ": field 'weight' has " +
                                       std::to_string(wv.size()) + " entries, expected " +
                                       std::to_string(in * out));
                    }
                    if (bv.size() != out) {
                        throw io_error(ctx + ": field 'bias' has " + std::to_string(bv.size()) +
                                       " entries, expected " + std::to_string(out));
                    }
                    model.blocks.push_back(LayerBlock::linear(
                        Tensor::from_data(in, out, std::move(wv)),
                        Tensor::from_data(1, out, std::move(bv))));
                    break;
                }
                case BlockKind::layernorm: {
                    const auto dim = static_cast<std::size_t>(require_int(blocks[i], "dim", ctx));
                    auto gv = require_doubles(blocks[i], "gain", ctx);
                    auto bv = require_doubles(blocks[i], "bias", ctx);
                    if (gv.size() != dim || bv.size() != dim) {
                        throw io_error(ctx + ": gain/bias lengths do not match field 'dim'");
                    }
                    model.blocks.push_back(LayerBlock::layer_norm(
                        Tensor::from_data(1, dim, std::move(gv)),
                        Tensor::from_data(1, dim, std::move(bv)),
                        require_double(blocks[i], "eps", ctx)));
                    break;
                }
                default: {
                    const auto dim = static_cast<std::size_t>(require_int(blocks[i], "dim", ctx));
                    model.blocks.push_back(LayerBlock::elementwise(kind, dim));
                    break;
                }
            }
        }
        for (const auto& h : require_field(j, "hooks", where)) {
            if (!h.is_number_integer() || h.get<std::int64_t>() < 0) {
                throw io_error(where + ": field 'hooks' must hold nonnegative integers");
            }
            model.hooks.push_back(h.get<std::size_t>());
        }
        model.validate();
    } catch (const std::invalid_argument& e) {
        // shape/config problems inside the file are load errors
        throw io_error(where + ": " + e.what());
    }
    return model;
}

void save_model(const std::string& path, const FrozenModel& model) {
    write_json(path, model_to_json(model));
}

FrozenModel load_model(const std::string& path) {
    return model_from_json(read_json(path), path);
}

}  // namespace actsteer
