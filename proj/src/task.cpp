#include "actsteer/task.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "actsteer/rng.hpp"

namespace actsteer {

namespace {

HookPolicy policy_of(const ModelSpec& spec) {
    HookPolicy p;
    p.post_layernorm = spec.post_layernorm;
    p.explicit_hooks = spec.explicit_hooks;
    return p;
}

FrozenModel build_model(const ModelSpec& spec) {
    return generate_synthetic(spec.seed, spec.depth, spec.widths, policy_of(spec),
                              nonlinearity_from_name(spec.nonlinearity));
}

Tensor gaussian_samples(Rng rng, std::size_t rows, std::size_t cols) {
    Tensor t = Tensor::zeros(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = rng.normal();
    return t;
}

json trace_to_json(const ActivationTrace& trace) {
    json hooks = json::array();
    for (const Tensor& t : trace.per_hook) hooks.push_back(tensor_to_json(t));
    return json{{"per_hook", hooks}};
}

ActivationTrace trace_from_json(const json& j, const std::string& where) {
    const json& hooks = require_field(j, "per_hook", where);
    if (!hooks.is_array()) throw io_error(where + ": field 'per_hook' is not an array");
    ActivationTrace trace;
    for (std::size_t h = 0; h < hooks.size(); ++h) {
        trace.per_hook.push_back(
            tensor_from_json(hooks[h], where + ": per_hook[" + std::to_string(h) + "]"));
    }
    return trace;
}

}  // namespace

json tensor_to_json(const Tensor& t) {
    return json{{"rows", t.rows}, {"cols", t.cols}, {"data", t.data}};
}

Tensor tensor_from_json(const json& j, const std::string& where) {
    const auto rows = static_cast<std::size_t>(require_int(j, "rows", where));
    const auto cols = static_cast<std::size_t>(require_int(j, "cols", where));
    auto data = require_doubles(j, "data", where);
    if (data.size() != rows * cols) {
        throw io_error(where + ": field 'data' has " + std::to_string(data.size()) +
                       " entries for " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    return Tensor::from_data(rows, cols, std::move(data));
}

json task_spec_to_json(const TaskSpec& spec) {
    json model;
    model["seed"] = spec.model.seed;
    model["depth"] = spec.model.depth;
    model["widths"] = spec.model.widths;
    model["nonlinearity"] = spec.model.nonlinearity;
    model["hook_policy"] = spec.model.post_layernorm ? "post_layernorm" : "explicit";
    model["explicit_hooks"] = spec.model.explicit_hooks;

    json j;
    j["model"] = model;
    j["data_seed"] = spec.data_seed;
    j["n_train"] = spec.n_train;
    j["n_heldout"] = spec.n_heldout;
    j["input_dist"] = spec.input_dist;
    j["paired_targets"] = spec.paired_targets;
    if (spec.planted.has_value()) {
        const PlantedSpec& p = *spec.planted;
        j["planted"] = json{{"hook_index", p.hook_index},
                            {"support_size", p.support_size},
                            {"scale_range", {p.scale_lo, p.scale_hi}},
                            {"shift_range", {p.shift_lo, p.shift_hi}},
                            {"magnitude_decades", p.magnitude_decades},
                            {"plant_seed", p.plant_seed}};
    } else {
        j["planted"] = nullptr;
    }
    return j;
}

TaskSpec task_spec_from_json(const json& j, const std::string& where) {
    TaskSpec spec;
    const json& jm = require_field(j, "model", where);
    const std::string mctx = where + ": model";
    spec.model.seed = static_cast<std::uint64_t>(require_int(jm, "seed", mctx));
    spec.model.depth = static_cast<std::size_t>(require_int(jm, "depth", mctx));
    spec.model.widths.clear();
    for (const auto& w : require_field(jm, "widths", mctx)) {
        if (!w.is_number_integer() || w.get<std::int64_t>() <= 0) {
            throw io_error(mctx + ": field 'widths' must hold positive integers");
        }
        spec.model.widths.push_back(w.get<std::size_t>());
    }
    spec.model.nonlinearity = require_string(jm, "nonlinearity", mctx);
    const std::string policy = require_string(jm, "hook_policy", mctx);
    if (policy == "post_layernorm") {
        spec.model.post_layernorm = true;
    } else if (policy == "explicit") {
        spec.model.post_layernorm = false;
    } else {
        throw io_error(mctx + ": field 'hook_policy' must be post_layernorm or explicit");
    }
    spec.model.explicit_hooks.clear();
    if (jm.contains("explicit_hooks")) {
        for (const auto& h : jm.at("explicit_hooks")) {
            if (!h.is_number_integer() || h.get<std::int64_t>() < 0) {
                throw io_error(mctx + ": field 'explicit_hooks' must hold nonnegative integers");
            }
            spec.model.explicit_hooks.push_back(h.get<std::size_t>());
        }
    }

    spec.data_seed = static_cast<std::uint64_t>(require_int(j, "data_seed", where));
    spec.n_train = static_cast<std::size_t>(require_int(j, "n_train", where));
    spec.n_heldout = static_cast<std::size_t>(require_int(j, "n_heldout", where));
    spec.input_dist = require_string(j, "input_dist", where);
    const json& paired = require_field(j, "paired_targets", where);
    if (!paired.is_boolean()) throw io_error(where + ": field 'paired_targets' is not a bool");
    spec.paired_targets = paired.get<bool>();

    if (j.contains("planted") && !j.at("planted").is_null()) {
        const json& jp = j.at("planted");
        const std::string pctx = where + ": planted";
        PlantedSpec p;
        p.hook_index = static_cast<std::size_t>(require_int(jp, "hook_index", pctx));
        p.support_size = static_cast<std::size_t>(require_int(jp, "support_size", pctx));
        const auto scale = require_doubles(jp, "scale_range", pctx);
        const auto shift = require_doubles(jp, "shift_range", pctx);
        if (scale.size() != 2 || shift.size() != 2) {
            throw io_error(pctx + ": scale_range/shift_range must have 2 entries");
        }
        p.scale_lo = scale[0];
        p.scale_hi = scale[1];
        p.shift_lo = shift[0];
        p.shift_hi = shift[1];
        if (jp.contains("magnitude_decades")) {
            p.magnitude_decades = require_double(jp, "magnitude_decades", pctx);
        }
        p.plant_seed = static_cast<std::uint64_t>(require_int(jp, "plant_seed", pctx));
        spec.planted = p;
    }
    return spec;
}

namespace {

TransportStack planted_stack(const TaskSpec& spec, const FrozenModel& model) {
    TransportStack stack = identity_stack(model.hook_dims());
    if (!spec.planted.has_value() || spec.planted->support_size == 0) return stack;
    const PlantedSpec& p = *spec.planted;
    if (p.hook_index >= stack.hook_count()) {
        throw config_error("planted.hook_index " + std::to_string(p.hook_index) +
                           " out of range (model has " + std::to_string(stack.hook_count()) +
                           " hooks)");
    }
    AffineMap& m = stack.maps[p.hook_index];
    if (p.support_size > m.dim()) {
        throw config_error("planted.support_size " + std::to_string(p.support_size) +
                           " exceeds hook width " + std::to_string(m.dim()));
    }
    if (p.scale_lo > p.scale_hi || p.shift_lo > p.shift_hi) {
        throw config_error("planted ranges must satisfy lo <= hi");
    }
    if (p.magnitude_decades < 0.0) {
        throw config_error("planted.magnitude_decades must be >= 0");
    }
    Rng rng(p.plant_seed);
    std::vector<std::size_t> coords(m.dim());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    rng.shuffle(coords);
    coords.resize(p.support_size);
    for (std::size_t c : coords) {
        m.omega[c] = 1.0 + rng.uniform(p.scale_lo, p.scale_hi);
        m.bias[c] = rng.uniform(p.shift_lo, p.shift_hi);
    }
    // Damping draws come after all base draws so that turning the spread on
    // or off leaves the support set and base offsets unchanged.
    if (p.magnitude_decades > 0.0) {
        for (std::size_t c : coords) {
            const double damp = std::pow(10.0, -rng.uniform(0.0, p.magnitude_decades));
            m.omega[c] = 1.0 + (m.omega[c] - 1.0) * damp;
            m.bias[c] *= damp;
        }
    }
    return stack;
}

void validate_spec(const TaskSpec& spec) {
    if (spec.input_dist != "gaussian") {
        throw config_error("input_dist '" + spec.input_dist + "' is not supported");
    }
    if (spec.n_train == 0 || spec.n_heldout == 0) {
        throw config_error("n_train and n_heldout must be positive");
    }
}

}  // namespace

void gen_task(const TaskSpec& spec, const std::string& out_dir) {
    validate_spec(spec);
    FrozenModel model = build_model(spec.model);
    TransportStack plant = planted_stack(spec, model);

    std::filesystem::create_directories(out_dir);
    const std::string model_path = out_dir + "/model.json";
    save_model(model_path, model);
    const std::uint64_t model_hash = fnv1a64(read_file(model_path));

    Rng root(spec.data_seed);
    const std::size_t d0 = model.input_dim();
    Tensor train_source = gaussian_samples(root.split(10), spec.n_train, d0);
    Tensor heldout_source = gaussian_samples(root.split(11), spec.n_heldout, d0);
    Tensor train_target_inputs =
        spec.paired_targets ? train_source : gaussian_samples(root.split(12), spec.n_train, d0);
    Tensor heldout_target_inputs = spec.paired_targets
                                       ? heldout_source
                                       : gaussian_samples(root.split(13), spec.n_heldout, d0);

    ActivationTrace train_target =
        forward_with_stack(model, plant, train_target_inputs, 1.0).trace;
    ActivationTrace heldout_target =
        forward_with_stack(model, plant, heldout_target_inputs, 1.0).trace;

    json data;
    data["version"] = 1;
    data["train_source"] = tensor_to_json(train_source);
    data["heldout_source"] = tensor_to_json(heldout_source);
    data["train_target"] = trace_to_json(train_target);
    data["heldout_target"] = trace_to_json(heldout_target);
    write_json(out_dir + "/data.json", data);

    StackFile truth;
    truth.model_hash = model_hash;
    truth.stack = plant;
    truth.train_config_echo = json{{"role", "planted ground truth"},
                                   {"task_spec", task_spec_to_json(spec)}};
    save_stack(out_dir + "/ground_truth.json", truth);

    json task;
    task["version"] = 1;
    task["spec"] = task_spec_to_json(spec);
    task["files"] = json{{"model", "model.json"},
                         {"data", "data.json"},
                         {"ground_truth", "ground_truth.json"}};
    task["model_hash"] = hash_hex(model_hash);
    task["hook_dims"] = model.hook_dims();
    write_json(out_dir + "/task.json", task);
}

TaskBundle load_task(const std::string& dir) {
    const std::string task_path = dir + "/task.json";
    const json task = read_json(task_path);
    if (require_int(task, "version", task_path) != 1) {
        throw io_error(task_path + ": unknown version");
    }
    TaskBundle bundle;
    bundle.spec = task_spec_from_json(require_field(task, "spec", task_path), task_path);

    const json& files = require_field(task, "files", task_path);
    bundle.model_path = dir + "/" + require_string(files, "model", task_path + ": files");
    bundle.model = load_model(bundle.model_path);
    bundle.model_hash = fnv1a64(read_file(bundle.model_path));
    const std::string recorded = require_string(task, "model_hash", task_path);
    if (recorded != hash_hex(bundle.model_hash)) {
        throw io_error(task_path + ": field 'model_hash' (" + recorded +
                       ") does not match the model file (" + hash_hex(bundle.model_hash) + ")");
    }

    const std::string data_path = dir + "/" + require_string(files, "data", task_path + ": files");
    const json data = read_json(data_path);
    bundle.train_source =
        tensor_from_json(require_field(data, "train_source", data_path), data_path);
    bundle.heldout_source =
        tensor_from_json(require_field(data, "heldout_source", data_path), data_path);
    bundle.train_target =
        trace_from_json(require_field(data, "train_target", data_path), data_path);
    bundle.heldout_target =
        trace_from_json(require_field(data, "heldout_target", data_path), data_path);

    const auto dims = bundle.model.hook_dims();
    for (const ActivationTrace* tr : {&bundle.train_target, &bundle.heldout_target}) {
        if (tr->per_hook.size() != dims.size()) {
            throw io_error(data_path + ": target trace hook count != model hook count");
        }
        for (std::size_t h = 0; h < dims.size(); ++h) {
            if (tr->per_hook[h].cols != dims[h]) {
                throw io_error(data_path + ": target trace width mismatch at hook " +
                               std::to_string(h));
            }
        }
    }
    return bundle;
}

TransportStack load_ground_truth(const std::string& dir) {
    const std::string task_path = dir + "/task.json";
    const json task = read_json(task_path);
    const json& files = require_field(task, "files", task_path);
    const std::string path =
        dir + "/" + require_string(files, "ground_truth", task_path + ": files");
    return load_stack(path).stack;
}

}  // namespace actsteer
