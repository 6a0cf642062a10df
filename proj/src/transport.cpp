#include "actsteer/transport.hpp"

#include <cmath>

#include "actsteer/io.hpp"

namespace actsteer {

AffineMap AffineMap::identity(std::size_t dim) {
    AffineMap m;
    m.omega.assign(dim, 1.0);
    m.bias.assign(dim, 0.0);
    return m;
}

void AffineMap::validate() const {
    if (omega.size() != bias.size()) {
        throw shape_error("AffineMap: omega length " + std::to_string(omega.size()) +
                          " != bias length " + std::to_string(bias.size()));
    }
    for (double v : omega)
        if (!std::isfinite(v)) throw numeric_error("AffineMap: non-finite omega entry");
    for (double v : bias)
        if (!std::isfinite(v)) throw numeric_error("AffineMap: non-finite bias entry");
}

void TransportStack::validate() const {
    if (maps.size() != hook_dims.size()) {
        throw shape_error("TransportStack: " + std::to_string(maps.size()) + " maps for " +
                          std::to_string(hook_dims.size()) + " hook dims");
    }
    for (std::size_t i = 0; i < maps.size(); ++i) {
        maps[i].validate();
        if (maps[i].dim() != hook_dims[i]) {
            throw shape_error("TransportStack: map " + std::to_string(i) + " has dim " +
                              std::to_string(maps[i].dim()) + ", expected " +
                              std::to_string(hook_dims[i]));
        }
    }
}

TransportStack identity_stack(const std::vector<std::size_t>& hook_dims) {
    TransportStack s;
    s.hook_dims = hook_dims;
    s.maps.reserve(hook_dims.size());
    for (std::size_t d : hook_dims) s.maps.push_back(AffineMap::identity(d));
    return s;
}

HookParams as_params(const AffineMap& map) {
    map.validate();
    return {Tensor::row_vector(map.omega), Tensor::row_vector(map.bias)};
}

HookParams as_tracked_params(const AffineMap& map, Tape& tape) {
    map.validate();
    return {tape.leaf(Tensor::row_vector(map.omega), true),
            tape.leaf(Tensor::row_vector(map.bias), true)};
}

AffineMap to_map(const HookParams& p) {
    AffineMap m;
    m.omega = p.omega.data;
    m.bias = p.bias.data;
    m.validate();
    return m;
}

Tensor apply(const HookParams& p, const Tensor& z) {
    return affine(z, p.omega, p.bias);
}

Tensor apply(const AffineMap& map, const Tensor& z) {
    if (map.dim() != z.cols) {
        throw shape_error("apply: map dim " + std::to_string(map.dim()) +
                          " != input width " + std::to_string(z.cols));
    }
    return apply(as_params(map), z);
}

Tensor apply_with_strength(const AffineMap& map, const Tensor& z, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw config_error("apply_with_strength: lambda must be in [0, 1]");
    }
    if (lambda == 0.0) return z;
    Tensor full = apply(map, z);
    if (lambda == 1.0) return full;
    Tensor keep = Tensor::full(1, z.cols, 1.0 - lambda);
    Tensor take = Tensor::full(1, z.cols, lambda);
    return add(mul(z, keep), mul(full, take));
}

TransportStack compose(const TransportStack& first, const TransportStack& second) {
    first.validate();
    second.validate();
    if (first.hook_dims != second.hook_dims) {
        throw shape_error("compose: hook dims differ");
    }
    TransportStack out;
    out.hook_dims = first.hook_dims;
    out.maps.reserve(first.maps.size());
    for (std::size_t h = 0; h < first.maps.size(); ++h) {
        const AffineMap& a = first.maps[h];
        const AffineMap& b = second.maps[h];
        AffineMap c;
        c.omega.resize(a.dim());
        c.bias.resize(a.dim());
        for (std::size_t j = 0; j < a.dim(); ++j) {
            c.omega[j] = b.omega[j] * a.omega[j];
            c.bias[j] = b.omega[j] * a.bias[j] + b.bias[j];
        }
        out.maps.push_back(std::move(c));
    }
    return out;
}

SupportReport support(const TransportStack& stack, double tolerance) {
    if (!(tolerance >= 0.0)) throw config_error("support: tolerance must be >= 0");
    SupportReport rep;
    rep.per_hook.reserve(stack.maps.size());
    for (const AffineMap& m : stack.maps) {
        std::size_t here = 0;
        for (std::size_t j = 0; j < m.dim(); ++j) {
            const bool scale_on = std::fabs(m.omega[j] - 1.0) > tolerance;
            const bool shift_on = std::fabs(m.bias[j]) > tolerance;
            if (scale_on || shift_on) ++here;
            rep.sum_count += static_cast<std::size_t>(scale_on) +
                             static_cast<std::size_t>(shift_on);
        }
        rep.per_hook.push_back(here);
        rep.count += here;
    }
    return rep;
}

json stack_to_json(const StackFile& file) {
    file.stack.validate();
    json hooks = json::array();
    for (std::size_t h = 0; h < file.stack.maps.size(); ++h) {
        const AffineMap& m = file.stack.maps[h];
        hooks.push_back({{"dim", m.dim()}, {"omega", m.omega}, {"bias", m.bias}});
    }
    json j;
    j["version"] = file.version;
    j["model_hash"] = hash_hex(file.model_hash);
    j["hooks"] = hooks;
    j["train_config_echo"] = file.train_config_echo;
    return j;
}

StackFile stack_from_json(const json& j, const std::string& where) {
    StackFile file;
    file.version = static_cast<int>(require_int(j, "version", where));
    if (file.version != 1 && file.version != 2) {
        throw io_error(where + ": unknown version " + std::to_string(file.version));
    }
    if (file.version == 1) {
        file.warnings.push_back(where + ": version 1 checkpoint has no model hash; "
                                "cannot verify which model it was trained against");
        file.model_hash = 0;
    } else {
        const std::string hex = require_string(j, "model_hash", where);
        if (hex.size() != 16) throw io_error(where + ": field 'model_hash' is not 16 hex digits");
        file.model_hash = std::stoull(hex, nullptr, 16);
    }
    const json& hooks = require_field(j, "hooks", where);
    if (!hooks.is_array()) throw io_error(where + ": field 'hooks' is not an array");
    for (std::size_t h = 0; h < hooks.size(); ++h) {
        const std::string ctx = where + ": hooks[" + std::to_string(h) + "]";
        AffineMap m;
        m.omega = require_doubles(hooks[h], "omega", ctx);
        m.bias = require_doubles(hooks[h], "bias", ctx);
        const auto dim = static_cast<std::size_t>(require_int(hooks[h], "dim", ctx));
        if (m.omega.size() != dim || m.bias.size() != dim) {
            throw io_error(ctx + ": field 'dim' (" + std::to_string(dim) +
                           ") does not match omega/bias lengths");
        }
        file.stack.maps.push_back(std::move(m));
        file.stack.hook_dims.push_back(dim);
    }
    if (j.contains("train_config_echo")) file.train_config_echo = j.at("train_config_echo");
    file.stack.validate();
    return file;
}

void save_stack(const std::string& path, const StackFile& file) {
    write_json(path, stack_to_json(file));
}

StackFile load_stack(const std::string& path) {
    return stack_from_json(read_json(path), path);
}

}  // namespace actsteer
