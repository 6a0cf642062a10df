#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "actsteer/baselines.hpp"
#include "actsteer/common.hpp"
#include "actsteer/io.hpp"
#include "actsteer/optimizer.hpp"
#include "actsteer/task.hpp"

namespace {

using namespace actsteer;

json loss_to_json(const LossBreakdown& l) {
    return json{{"per_layer_delta", l.per_layer_delta},
                {"total_cost", l.total_cost},
                {"r1", l.reg_l1},
                {"rg", l.reg_group},
                {"objective", l.objective}};
}

json support_to_json(const SupportReport& r) {
    return json{{"count", r.count}, {"sum_count", r.sum_count}, {"per_hook", r.per_hook}};
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

StackFile load_checkpoint(const TaskBundle& task, const std::string& path) {
    StackFile f = load_stack(path);
    for (const std::string& w : f.warnings) std::fprintf(stderr, "note: %s\n", w.c_str());
    if (f.version >= 2 && f.model_hash != task.model_hash) {
        throw config_error(path + ": checkpoint was written against model " +
                           hash_hex(f.model_hash) + " but the task's model is " +
                           hash_hex(task.model_hash));
    }
    if (f.stack.hook_dims != task.model.hook_dims()) {
        throw config_error(path + ": checkpoint hook dims do not match the task's model");
    }
    return f;
}

AffineFitKind fit_kind_from_name(const std::string& name) {
    if (name == "order-stats-lsq") return AffineFitKind::order_stats_lsq;
    if (name == "moment-match") return AffineFitKind::moment_match;
    throw config_error("unknown sequential fit '" + name + "'");
}

// ---------------------------------------------------------------- gen-task

struct GenTaskArgs {
    std::string out;
    std::uint64_t model_seed = 0;
    std::size_t depth = 4;
    std::vector<std::size_t> widths{16, 16, 16, 16};
    std::string nonlinearity = "tanh";
    std::vector<std::size_t> hooks;  // empty: hook every layernorm
    std::uint64_t data_seed = 0;
    std::size_t n_train = 256;
    std::size_t n_heldout = 256;
    bool fresh_targets = false;
    long plant_hook = 0;
    long plant_support = 0;
    std::vector<double> plant_scale{-0.5, 0.5};
    std::vector<double> plant_shift{-1.0, 1.0};
    double plant_decades = 0.0;
    std::uint64_t plant_seed = 0;
};

void run_gen_task(const GenTaskArgs& a) {
    TaskSpec spec;
    spec.model.seed = a.model_seed;
    spec.model.depth = a.depth;
    spec.model.widths = a.widths;
    spec.model.nonlinearity = a.nonlinearity;
    if (!a.hooks.empty()) {
        spec.model.post_layernorm = false;
        spec.model.explicit_hooks = a.hooks;
    }
    spec.data_seed = a.data_seed;
    spec.n_train = a.n_train;
    spec.n_heldout = a.n_heldout;
    spec.paired_targets = !a.fresh_targets;
    if (a.plant_support > 0) {
        if (a.plant_hook < 0) throw config_error("--plant-hook must be >= 0");
        if (a.plant_scale.size() != 2 || a.plant_shift.size() != 2) {
            throw config_error("--plant-scale and --plant-shift take exactly two values");
        }
        PlantedSpec p;
        p.hook_index = static_cast<std::size_t>(a.plant_hook);
        p.support_size = static_cast<std::size_t>(a.plant_support);
        p.scale_lo = a.plant_scale[0];
        p.scale_hi = a.plant_scale[1];
        p.shift_lo = a.plant_shift[0];
        p.shift_hi = a.plant_shift[1];
        p.magnitude_decades = a.plant_decades;
        p.plant_seed = a.plant_seed;
        spec.planted = p;
    }
    gen_task(spec, a.out);
    std::printf("task written to %s\n", a.out.c_str());
}

// ---------------------------------------------------------------- train

struct CellOutcome {
    TransportStack stack;
    EvalReport heldout;
    double train_final_cost = 0.0;
    double runtime_seconds = 0.0;
};

CellOutcome run_train_to_dir(const TaskBundle& task, const TrainConfig& config,
                             const std::string& method, AffineFitKind fit,
                             const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    CellOutcome out;
    RunMetrics metrics;
    metrics.hook_count = task.model.hooks.size();
    json echo;
    echo["method"] = method;
    if (method == "lineas") {
        TrainResult res = train_on_trace(task.model, task.train_source, task.train_target,
                                         config);
        out.stack = std::move(res.stack);
        metrics = std::move(res.metrics);
        out.train_final_cost = metrics.records.back().total_cost;
        echo["config"] = train_config_to_json(config);
    } else if (method == "mean-shift") {
        out.stack = fit_mean_shift(task.model, task.train_source, task.train_target);
        out.train_final_cost =
            global_cost(forward_with_stack(task.model, out.stack, task.train_source).trace,
                        task.train_target)
                .total_cost;
    } else if (method == "sequential") {
        out.stack = fit_sequential_affine(task.model, task.train_source, task.train_target,
                                          fit);
        out.train_final_cost =
            global_cost(forward_with_stack(task.model, out.stack, task.train_source).trace,
                        task.train_target)
                .total_cost;
        echo["fit"] = fit == AffineFitKind::order_stats_lsq ? "order-stats-lsq"
                                                            : "moment-match";
    } else {
        throw config_error("unknown method '" + method +
                           "' (expected lineas, mean-shift or sequential)");
    }
    out.heldout = evaluate(out.stack, task.model, task.heldout_source, task.heldout_target);
    out.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::filesystem::create_directories(out_dir);
    StackFile ckpt;
    ckpt.model_hash = task.model_hash;
    ckpt.stack = out.stack;
    ckpt.train_config_echo = echo;
    save_stack(out_dir + "/checkpoint.json", ckpt);
    write_file(out_dir + "/metrics.csv", metrics.to_csv());
    write_json(out_dir + "/metrics.json", metrics.to_json());

    const SupportReport sup = support(out.stack, 0.0);
    json summary;
    summary["version"] = 1;
    summary["method"] = method;
    summary["config"] = method == "lineas" ? train_config_to_json(config) : json(nullptr);
    summary["train_final_cost"] = out.train_final_cost;
    summary["heldout"] = loss_to_json(out.heldout.loss);
    summary["support"] = support_to_json(sup);
    summary["runtime_seconds"] = out.runtime_seconds;
    write_json(out_dir + "/summary.json", summary);
    return out;
}

struct TrainArgs {
    std::string task_dir;
    std::string out_dir;
    std::string config_path;
    std::string method = "lineas";
    std::string fit = "order-stats-lsq";
    double gamma = 0.0, lambda1 = 1.0, lambdaG = 1.0, lr0 = 0.1;
    long steps = 1000, batch = 32, refit_steps = 0;
    std::uint64_t seed = 0;
    std::string lr_schedule = "cosine", prox_scaling = "standard";
};

struct TrainOptionSet {
    CLI::Option *gamma, *lambda1, *lambdaG, *lr0, *steps, *batch, *refit, *seed, *sched,
        *scaling;
};

TrainOptionSet add_train_options(CLI::App* cmd, TrainArgs& a) {
    TrainOptionSet o;
    o.gamma = cmd->add_option("--gamma", a.gamma, "sparse-group-lasso weight");
    o.lambda1 = cmd->add_option("--lambda1", a.lambda1, "coordinate (l1) weight");
    o.lambdaG = cmd->add_option("--lambdaG", a.lambdaG, "group (l2) weight");
    o.lr0 = cmd->add_option("--lr0", a.lr0, "initial learning rate");
    o.steps = cmd->add_option("--steps", a.steps, "optimization steps");
    o.batch = cmd->add_option("--batch", a.batch, "minibatch rows");
    o.refit = cmd->add_option("--refit-steps", a.refit_steps,
                              "extra support-frozen steps at gamma 0");
    o.seed = cmd->add_option("--seed", a.seed, "training seed");
    o.sched = cmd->add_option("--lr-schedule", a.lr_schedule, "cosine | constant");
    o.scaling = cmd->add_option("--prox-scaling", a.prox_scaling, "standard | literal");
    return o;
}

// Defaults, then the config file, then explicit flags. Returns whether gamma
// was given anywhere.
bool resolve_config(const TrainArgs& a, const TrainOptionSet& o, TrainConfig& config) {
    bool gamma_given = false;
    if (!a.config_path.empty()) {
        const json j = read_json(a.config_path);
        config = train_config_from_json(j, a.config_path);
        gamma_given = j.contains("gamma");
    }
    if (o.gamma->count()) {
        config.gamma = a.gamma;
        gamma_given = true;
    }
    if (o.lambda1->count()) config.lambda1 = a.lambda1;
    if (o.lambdaG->count()) config.lambdaG = a.lambdaG;
    if (o.lr0->count()) config.lr0 = a.lr0;
    if (o.steps->count()) config.steps = a.steps;
    if (o.batch->count()) config.batch = a.batch;
    if (o.refit->count()) config.refit_steps = a.refit_steps;
    if (o.seed->count()) config.seed = a.seed;
    if (o.sched->count()) config.lr_schedule = lr_schedule_from_name(a.lr_schedule);
    if (o.scaling->count()) config.prox_scaling = prox_scaling_from_name(a.prox_scaling);
    config.validate();
    return gamma_given;
}

void run_train(const TrainArgs& a, const TrainOptionSet& o) {
    TrainConfig config;
    const bool gamma_given = resolve_config(a, o, config);
    if (a.method == "lineas" && !gamma_given) {
        std::fprintf(stderr, "note: gamma not specified, defaulting to 0 (no sparsity)\n");
    }
    TaskBundle task = load_task(a.task_dir);
    CellOutcome res =
        run_train_to_dir(task, config, a.method, fit_kind_from_name(a.fit), a.out_dir);
    const SupportReport sup = support(res.stack, 0.0);
    std::printf("%s: heldout total_cost %.6g, support %zu, wrote %s\n", a.method.c_str(),
                res.heldout.loss.total_cost, sup.count, a.out_dir.c_str());
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
    TrainArgs base;
    std::vector<double> gammas;
    std::vector<std::uint64_t> seeds;
    std::vector<long> steps_list{1000};
};

void run_sweep(const SweepArgs& a, const TrainOptionSet& o) {
    if (a.gammas.empty()) throw config_error("sweep: --gammas must be nonempty");
    if (a.seeds.empty()) throw config_error("sweep: --seeds must be nonempty");
    if (a.steps_list.empty()) throw config_error("sweep: --steps-list must be nonempty");
    TrainConfig base;
    resolve_config(a.base, o, base);
    TaskBundle task = load_task(a.base.task_dir);
    const std::size_t hook_count = task.model.hooks.size();

    std::filesystem::create_directories(a.base.out_dir);
    std::string csv = "gamma,seed,steps,status,support,heldout_total_cost";
    for (std::size_t h = 0; h < hook_count; ++h) csv += ",heldout_delta_l" + std::to_string(h);
    for (std::size_t h = 0; h < hook_count; ++h) csv += ",support_frac_l" + std::to_string(h);
    csv += "\n";

    for (long steps : a.steps_list) {
        for (double gamma : a.gammas) {
            for (std::uint64_t seed : a.seeds) {
                TrainConfig cfg = base;
                cfg.gamma = gamma;
                cfg.seed = seed;
                cfg.steps = steps;
                const std::string cell = a.base.out_dir + "/g" + fmt_short(gamma) + "_s" +
                                         std::to_string(seed) + "_steps" +
                                         std::to_string(steps);
                csv += fmt_short(gamma) + "," + std::to_string(seed) + "," +
                       std::to_string(steps) + ",";
                try {
                    CellOutcome res =
                        run_train_to_dir(task, cfg, "lineas", AffineFitKind::order_stats_lsq,
                                         cell);
                    const SupportReport sup = support(res.stack, 0.0);
                    csv += "ok," + std::to_string(sup.count) + "," +
                           fmt17(res.heldout.loss.total_cost);
                    for (double d : res.heldout.loss.per_layer_delta) csv += "," + fmt17(d);
                    for (std::size_t h = 0; h < hook_count; ++h) {
                        const double frac =
                            sup.count == 0 ? 0.0
                                           : static_cast<double>(sup.per_hook[h]) /
                                                 static_cast<double>(sup.count);
                        csv += "," + fmt17(frac);
                    }
                    csv += "\n";
                } catch (const std::exception& e) {
                    std::fprintf(stderr, "sweep cell (gamma %s, seed %llu, steps %ld): %s\n",
                                 fmt_short(gamma).c_str(),
                                 static_cast<unsigned long long>(seed), steps, e.what());
                    csv += "error,,";
                    for (std::size_t h = 0; h < 2 * hook_count; ++h) csv += ",";
                    csv += "\n";
                }
            }
        }
    }
    write_file(a.base.out_dir + "/sweep.csv", csv);

    json cfg_echo;
    cfg_echo["version"] = 1;
    cfg_echo["base_config"] = train_config_to_json(base);
    cfg_echo["gamma_values"] = a.gammas;
    cfg_echo["seeds"] = a.seeds;
    cfg_echo["steps_values"] = a.steps_list;
    cfg_echo["task_dir"] = a.base.task_dir;
    write_json(a.base.out_dir + "/sweep_config.json", cfg_echo);
    std::printf("sweep written to %s\n", a.base.out_dir.c_str());
}

// ---------------------------------------------------------------- compose

struct ComposeArgs {
    std::string a_path, b_path, task_dir, out_path;
};

json eval_to_json(const EvalReport& rep) {
    return json{{"heldout", loss_to_json(rep.loss)},
                {"support", support_to_json(rep.support_report)}};
}

void run_compose(const ComposeArgs& a) {
    TaskBundle task = load_task(a.task_dir);
    StackFile fa = load_checkpoint(task, a.a_path);
    StackFile fb = load_checkpoint(task, a.b_path);
    const TransportStack ab = compose(fa.stack, fb.stack);
    const TransportStack ba = compose(fb.stack, fa.stack);

    // Materialized composition must agree with applying the two maps one
    // after the other on real activations.
    const ActivationTrace clean = precompute_targets(task.model, task.heldout_source);
    auto deviation = [&](const TransportStack& first, const TransportStack& second,
                         const TransportStack& mat) {
        double dev = 0.0;
        for (std::size_t h = 0; h < clean.per_hook.size(); ++h) {
            const Tensor& z = clean.per_hook[h];
            const Tensor chained = apply(second.maps[h], apply(first.maps[h], z));
            const Tensor direct = apply(mat.maps[h], z);
            for (std::size_t i = 0; i < direct.size(); ++i) {
                dev = std::max(dev, std::abs(direct.data[i] - chained.data[i]));
            }
        }
        return dev;
    };

    json report;
    report["version"] = 1;
    report["inputs"] = json{{"a", a.a_path}, {"b", a.b_path}, {"task", a.task_dir}};
    report["a_then_b"] = eval_to_json(
        evaluate(ab, task.model, task.heldout_source, task.heldout_target));
    report["b_then_a"] = eval_to_json(
        evaluate(ba, task.model, task.heldout_source, task.heldout_target));
    report["a_alone"] = eval_to_json(
        evaluate(fa.stack, task.model, task.heldout_source, task.heldout_target));
    report["b_alone"] = eval_to_json(
        evaluate(fb.stack, task.model, task.heldout_source, task.heldout_target));
    report["max_abs_deviation_a_then_b"] = deviation(fa.stack, fb.stack, ab);
    report["max_abs_deviation_b_then_a"] = deviation(fb.stack, fa.stack, ba);
    bool order_matters = false;
    for (std::size_t h = 0; h < ab.maps.size(); ++h) {
        order_matters = order_matters || ab.maps[h].omega != ba.maps[h].omega ||
                        ab.maps[h].bias != ba.maps[h].bias;
    }
    report["order_dependent"] = order_matters;

    if (a.out_path.empty()) {
        std::printf("%s", json_bytes(report).c_str());
    } else {
        write_json(a.out_path, report);
        std::printf("compose report written to %s\n", a.out_path.c_str());
    }
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string checkpoint_path, task_dir, out_path;
    double strength = 1.0;
};

void run_eval(const EvalArgs& a) {
    TaskBundle task = load_task(a.task_dir);
    StackFile f = load_checkpoint(task, a.checkpoint_path);
    EvalReport rep = evaluate(f.stack, task.model, task.heldout_source, task.heldout_target,
                              a.strength);
    json report;
    report["version"] = 1;
    report["checkpoint"] = a.checkpoint_path;
    report["task"] = a.task_dir;
    report["strength"] = a.strength;
    report["heldout"] = loss_to_json(rep.loss);
    report["support"] = support_to_json(rep.support_report);
    if (a.out_path.empty()) {
        std::printf("%s", json_bytes(report).c_str());
    } else {
        write_json(a.out_path, report);
        std::printf("eval report written to %s\n", a.out_path.c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learned activation transport maps on frozen networks"};
    app.require_subcommand(1);

    GenTaskArgs ga;
    CLI::App* gen = app.add_subcommand("gen-task", "Generate a synthetic task directory");
    gen->add_option("--out", ga.out, "output directory")->required();
    gen->add_option("--model-seed", ga.model_seed, "frozen model seed");
    gen->add_option("--depth", ga.depth, "model depth (stages)");
    gen->add_option("--widths", ga.widths, "layer widths, one per stage")->delimiter(',');
    gen->add_option("--nonlinearity", ga.nonlinearity, "tanh | gelu | relu");
    gen->add_option("--hooks", ga.hooks, "explicit hook block indices")->delimiter(',');
    gen->add_option("--data-seed", ga.data_seed, "sampling seed");
    gen->add_option("--n-train", ga.n_train, "training rows");
    gen->add_option("--n-heldout", ga.n_heldout, "held-out rows");
    gen->add_flag("--fresh-targets", ga.fresh_targets,
                  "draw target inputs independently of source inputs");
    gen->add_option("--plant-hook", ga.plant_hook, "hook index of the planted map");
    gen->add_option("--plant-support", ga.plant_support,
                    "planted coordinates (0 disables planting)");
    gen->add_option("--plant-scale", ga.plant_scale, "omega offset range lo,hi")
        ->delimiter(',');
    gen->add_option("--plant-shift", ga.plant_shift, "bias range lo,hi")->delimiter(',');
    gen->add_option("--plant-decades", ga.plant_decades,
                    "log-uniform magnitude spread in decades");
    gen->add_option("--plant-seed", ga.plant_seed, "planted map seed");
    gen->callback([&] { run_gen_task(ga); });

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "Fit transport maps on a task");
    train->add_option("--task", ta.task_dir, "task directory")->required();
    train->add_option("--out", ta.out_dir, "output directory")->required();
    train->add_option("--config", ta.config_path, "JSON train config");
    train->add_option("--method", ta.method, "lineas | mean-shift | sequential");
    train->add_option("--sequential-fit", ta.fit, "order-stats-lsq | moment-match");
    TrainOptionSet to = add_train_options(train, ta);
    train->callback([&] { run_train(ta, to); });

    SweepArgs sa;
    CLI::App* sweep = app.add_subcommand("sweep", "Train over a gamma x seed x steps grid");
    sweep->add_option("--task", sa.base.task_dir, "task directory")->required();
    sweep->add_option("--out", sa.base.out_dir, "output directory")->required();
    sweep->add_option("--config", sa.base.config_path, "JSON base train config");
    sweep->add_option("--gammas", sa.gammas, "gamma grid")->delimiter(',')->required();
    sweep->add_option("--seeds", sa.seeds, "seed list")->delimiter(',')->required();
    sweep->add_option("--steps-list", sa.steps_list, "steps grid")->delimiter(',');
    TrainOptionSet so = add_train_options(sweep, sa.base);
    sweep->callback([&] { run_sweep(sa, so); });

    ComposeArgs ca;
    CLI::App* comp = app.add_subcommand("compose", "Compose two checkpoints, both orders");
    comp->add_option("--a", ca.a_path, "first checkpoint")->required();
    comp->add_option("--b", ca.b_path, "second checkpoint")->required();
    comp->add_option("--task", ca.task_dir, "evaluation task directory")->required();
    comp->add_option("--out", ca.out_path, "report file (default: stdout)");
    comp->callback([&] { run_compose(ca); });

    EvalArgs ea;
    CLI::App* ev = app.add_subcommand("eval", "Score a checkpoint on held-out data");
    ev->add_option("--checkpoint", ea.checkpoint_path, "checkpoint file")->required();
    ev->add_option("--task", ea.task_dir, "task directory")->required();
    ev->add_option("--strength", ea.strength, "interpolation strength in [0, 1]");
    ev->add_option("--out", ea.out_path, "report file (default: stdout)");
    ev->callback([&] { run_eval(ea); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? actsteer::exit_ok : actsteer::exit_config_error;
    } catch (const actsteer::numeric_error& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return actsteer::exit_numeric_error;
    } catch (const actsteer::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return actsteer::exit_config_error;
    } catch (const actsteer::shape_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return actsteer::exit_config_error;
    } catch (const actsteer::io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return actsteer::exit_config_error;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return actsteer::exit_config_error;
    }
    return actsteer::exit_ok;
}
