#include "actsteer/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "actsteer/rng.hpp"

namespace actsteer {

LrSchedule lr_schedule_from_name(const std::string& name) {
    if (name == "cosine") return LrSchedule::cosine;
    if (name == "constant") return LrSchedule::constant;
    throw config_error("unknown lr_schedule '" + name + "'");
}

ProxScaling prox_scaling_from_name(const std::string& name) {
    if (name == "standard") return ProxScaling::standard;
    if (name == "literal") return ProxScaling::literal;
    throw config_error("unknown prox_scaling '" + name + "'");
}

std::string lr_schedule_name(LrSchedule s) {
    return s == LrSchedule::cosine ? "cosine" : "constant";
}

std::string prox_scaling_name(ProxScaling s) {
    return s == ProxScaling::standard ? "standard" : "literal";
}

void TrainConfig::validate() const {
    if (steps < 1) throw config_error("config.steps must be >= 1");
    if (batch < 2) throw config_error("config.batch must be >= 2 (column sorting needs rows)");
    if (!(lr0 > 0.0)) throw config_error("config.lr0 must be > 0");
    if (!(gamma >= 0.0)) throw config_error("config.gamma must be >= 0");
    if (!(lambda1 >= 0.0)) throw config_error("config.lambda1 must be >= 0");
    if (!(lambdaG >= 0.0)) throw config_error("config.lambdaG must be >= 0");
    if (refit_steps < 0) throw config_error("config.refit_steps must be >= 0");
}

std::vector<double> soft_threshold(const std::vector<double>& z, double tau) {
    if (!(tau >= 0.0)) throw config_error("soft_threshold: tau must be >= 0");
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (z[i] > tau) {
            out[i] = z[i] - tau;
        } else if (z[i] < -tau) {
            out[i] = z[i] + tau;
        } else {
            out[i] = 0.0;
        }
    }
    return out;
}

std::vector<double> group_prox(const std::vector<double>& z, double tau) {
    if (!(tau >= 0.0)) throw config_error("group_prox: tau must be >= 0");
    double sq = 0.0;
    for (double v : z) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm <= tau) return std::vector<double>(z.size(), 0.0);
    const double factor = 1.0 - tau / norm;
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = factor * z[i];
    return out;
}

double lr_at(double lr0, LrSchedule schedule, long t, long phase_steps) {
    if (schedule == LrSchedule::constant) return lr0;
    constexpr double pi = 3.14159265358979323846;
    return lr0 * 0.5 * (1.0 + std::cos(pi * static_cast<double>(t) /
                                       static_cast<double>(phase_steps)));
}

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string step_dump(const TransportStack& stack, long step, double lr,
                      const std::string& reason) {
    std::ostringstream os;
    os << "aborting at step " << step << " (lr " << lr << "): " << reason;
    for (std::size_t h = 0; h < stack.maps.size(); ++h) {
        const AffineMap& m = stack.maps[h];
        double wlo = m.omega[0], whi = m.omega[0], blo = m.bias[0], bhi = m.bias[0];
        for (std::size_t j = 1; j < m.dim(); ++j) {
            wlo = std::min(wlo, m.omega[j]);
            whi = std::max(whi, m.omega[j]);
            blo = std::min(blo, m.bias[j]);
            bhi = std::max(bhi, m.bias[j]);
        }
        os << "\n  hook " << h << ": omega in [" << wlo << ", " << whi << "], bias in ["
           << blo << ", " << bhi << "]";
    }
    return os.str();
}

}  // namespace

LossBreakdown train_step(const FrozenModel& model, TransportStack& transports,
                         const Tensor& source_batch, const ActivationTrace& target_batch,
                         const TrainConfig& config, long step_index,
                         const std::vector<std::vector<char>>* active) {
    config.validate();
    if (transports.hook_count() != model.hooks.size()) {
        throw config_error("train_step: stack hook count != model hook count");
    }
    if (source_batch.rows != target_batch.rows()) {
        throw config_error("train_step: source batch has " +
                           std::to_string(source_batch.rows) + " rows, target batch has " +
                           std::to_string(target_batch.rows()));
    }
    if (active != nullptr && active->size() != transports.hook_count()) {
        throw config_error("train_step: active mask hook count mismatch");
    }
    const double lr = lr_at(config.lr0, config.lr_schedule, step_index, config.steps);

    LossBreakdown out;
    Tape tape;
    std::vector<HookParams> params;
    params.reserve(transports.maps.size());
    for (const AffineMap& m : transports.maps) params.push_back(as_tracked_params(m, tape));

    try {
        ForwardResult fwd = forward_with_hooks(model, &params, source_batch);
        Tensor loss = global_cost_tracked(fwd.trace, target_batch, &out.per_layer_delta);
        out.total_cost = loss.data[0];
        tape.backward(loss);
    } catch (const numeric_error& e) {
        throw numeric_error(step_dump(transports, step_index, lr, e.what()), step_index);
    }

    for (std::size_t h = 0; h < transports.maps.size(); ++h) {
        AffineMap& m = transports.maps[h];
        const Tensor gw = tape.grad(params[h].omega);
        const Tensor gb = tape.grad(params[h].bias);
        if (!all_finite(gw.data) || !all_finite(gb.data)) {
            throw numeric_error(step_dump(transports, step_index, lr,
                                          "non-finite gradient at hook " + std::to_string(h)),
                                step_index);
        }
        for (std::size_t j = 0; j < m.dim(); ++j) {
            m.omega[j] -= lr * gw.data[j];
            m.bias[j] -= lr * gb.data[j];
        }
        if (config.gamma > 0.0) {
            const double d = static_cast<double>(m.dim());
            const double tau1 = config.prox_scaling == ProxScaling::standard
                                    ? lr * config.gamma * config.lambda1
                                    : config.gamma * config.lambda1;
            const double tauG = config.prox_scaling == ProxScaling::standard
                                    ? lr * config.gamma * config.lambdaG * std::sqrt(d)
                                    : config.gamma * config.lambdaG;
            std::vector<double> u(m.dim());
            for (std::size_t j = 0; j < m.dim(); ++j) u[j] = m.omega[j] - 1.0;
            u = group_prox(soft_threshold(u, tau1), tauG);
            for (std::size_t j = 0; j < m.dim(); ++j) m.omega[j] = u[j] + 1.0;
            m.bias = group_prox(soft_threshold(m.bias, tau1), tauG);
        }
        if (active != nullptr) {
            const std::vector<char>& mask = (*active)[h];
            if (mask.size() != m.dim()) {
                throw config_error("train_step: active mask dim mismatch at hook " +
                                   std::to_string(h));
            }
            for (std::size_t j = 0; j < m.dim(); ++j) {
                if (!mask[j]) {
                    m.omega[j] = 1.0;
                    m.bias[j] = 0.0;
                }
            }
        }
    }
    fill_regularizers(out, transports, config.gamma, config.lambda1, config.lambdaG);
    return out;
}

namespace {

// Epoch-wise sampling without replacement: a fresh shuffle whenever fewer
// than `batch` indices remain (the remainder is dropped).
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::size_t batch, Rng rng)
        : n_(n), batch_(batch), pos_(n), rng_(rng), order_(n) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
    }

    std::vector<std::size_t> next() {
        if (pos_ + batch_ > n_) {
            rng_.shuffle(order_);
            pos_ = 0;
        }
        std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
        pos_ += batch_;
        return idx;
    }

private:
    std::size_t n_, batch_, pos_;
    Rng rng_;
    std::vector<std::size_t> order_;
};

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    Tensor out = Tensor::zeros(idx.size(), t.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < t.cols; ++c) out.at(r, c) = t.at(idx[r], c);
    return out;
}

ActivationTrace gather_trace(const ActivationTrace& trace, const std::vector<std::size_t>& idx) {
    ActivationTrace out;
    out.per_hook.reserve(trace.per_hook.size());
    for (const Tensor& t : trace.per_hook) out.per_hook.push_back(gather_rows(t, idx));
    return out;
}

}  // namespace

TrainResult train_on_trace(const FrozenModel& model, const Tensor& source_samples,
                           const ActivationTrace& target_trace, const TrainConfig& config) {
    config.validate();
    model.validate();
    if (source_samples.rows == 0) throw config_error("train: no source samples");
    if (target_trace.rows() == 0) throw config_error("train: target trace has no rows");
    if (target_trace.per_hook.size() != model.hooks.size()) {
        throw config_error("train: target trace hook count != model hook count");
    }
    const auto batch = static_cast<std::size_t>(config.batch);
    if (batch > source_samples.rows || batch > target_trace.rows()) {
        throw config_error("train: batch " + std::to_string(batch) +
                           " exceeds sample count (source " +
                           std::to_string(source_samples.rows) + ", target " +
                           std::to_string(target_trace.rows()) + ")");
    }

    TrainResult res;
    res.stack = identity_stack(model.hook_dims());
    res.metrics.hook_count = model.hooks.size();
    res.metrics.records.reserve(static_cast<std::size_t>(config.steps + config.refit_steps));

    Rng root(config.seed);
    EpochSampler source_sampler(source_samples.rows, batch, root.split(1));
    EpochSampler target_sampler(target_trace.rows(), batch, root.split(2));

    auto run_phase = [&](const TrainConfig& phase_config, long phase_steps, long step_offset,
                         const std::vector<std::vector<char>>* active) {
        for (long t = 0; t < phase_steps; ++t) {
            const auto t0 = std::chrono::steady_clock::now();
            Tensor sb = gather_rows(source_samples, source_sampler.next());
            ActivationTrace tb = gather_trace(target_trace, target_sampler.next());
            LossBreakdown lb = train_step(model, res.stack, sb, tb, phase_config, t, active);
            StepRecord rec;
            rec.step = step_offset + t;
            rec.lr = lr_at(phase_config.lr0, phase_config.lr_schedule, t, phase_config.steps);
            rec.total_cost = lb.total_cost;
            rec.per_layer_delta = lb.per_layer_delta;
            rec.r1 = lb.reg_l1;
            rec.rg = lb.reg_group;
            rec.support = support(res.stack, 0.0).count;
            rec.wall_time = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0).count();
            res.metrics.records.push_back(std::move(rec));
        }
    };

    run_phase(config, config.steps, 0, nullptr);

    if (config.refit_steps > 0) {
        std::vector<std::vector<char>> active;
        active.reserve(res.stack.maps.size());
        for (const AffineMap& m : res.stack.maps) {
            std::vector<char> mask(m.dim());
            for (std::size_t j = 0; j < m.dim(); ++j) {
                mask[j] = m.omega[j] != 1.0 || m.bias[j] != 0.0;
            }
            active.push_back(std::move(mask));
        }
        TrainConfig refit_config = config;
        refit_config.gamma = 0.0;
        refit_config.steps = config.refit_steps;
        run_phase(refit_config, config.refit_steps, config.steps, &active);
    }
    return res;
}

TrainResult train(const FrozenModel& model, const Tensor& source_samples,
                  const Tensor& target_samples, const TrainConfig& config) {
    if (target_samples.rows == 0) throw config_error("train: no target samples");
    return train_on_trace(model, source_samples, precompute_targets(model, target_samples),
                          config);
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string RunMetrics::to_csv() const {
    std::ostringstream os;
    os << "step,lr,total_cost";
    for (std::size_t h = 0; h < hook_count; ++h) os << ",delta_l" << h;
    os << ",r1,rg,support\n";
    for (const StepRecord& r : records) {
        os << r.step << ',' << fmt_double(r.lr) << ',' << fmt_double(r.total_cost);
        for (double d : r.per_layer_delta) os << ',' << fmt_double(d);
        os << ',' << fmt_double(r.r1) << ',' << fmt_double(r.rg) << ',' << r.support << '\n';
    }
    return os.str();
}

json RunMetrics::to_json() const {
    json rows = json::array();
    for (const StepRecord& r : records) {
        rows.push_back({{"step", r.step},
                        {"lr", r.lr},
                        {"total_cost", r.total_cost},
                        {"per_layer_delta", r.per_layer_delta},
                        {"r1", r.r1},
                        {"rg", r.rg},
                        {"support", r.support}});
    }
    return json{{"hook_count", hook_count}, {"records", rows}};
}

json train_config_to_json(const TrainConfig& config) {
    json j;
    j["version"] = 1;
    j["gamma"] = config.gamma;
    j["lambda1"] = config.lambda1;
    j["lambdaG"] = config.lambdaG;
    j["lr0"] = config.lr0;
    j["steps"] = config.steps;
    j["batch"] = config.batch;
    j["seed"] = config.seed;
    j["refit_steps"] = config.refit_steps;
    j["lr_schedule"] = lr_schedule_name(config.lr_schedule);
    j["prox_scaling"] = prox_scaling_name(config.prox_scaling);
    return j;
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw config_error(where + ": config must be a JSON object");
    static const char* known[] = {"version",     "gamma",  "lambda1", "lambdaG",
                                  "lr0",         "steps",  "batch",   "seed",
                                  "refit_steps", "lr_schedule", "prox_scaling"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw config_error(where + ": unknown field '" + it.key() + "'");
    }
    TrainConfig c;
    if (j.contains("version") && j.at("version") != 1) {
        throw config_error(where + ": unknown config version");
    }
    auto num = [&](const char* key, double fallback) {
        if (!j.contains(key)) return fallback;
        if (!j.at(key).is_number()) {
            throw config_error(where + ": field '" + std::string(key) + "' is not a number");
        }
        return j.at(key).get<double>();
    };
    auto integer = [&](const char* key, long fallback) {
        if (!j.contains(key)) return fallback;
        if (!j.at(key).is_number_integer()) {
            throw config_error(where + ": field '" + std::string(key) + "' is not an integer");
        }
        return j.at(key).get<long>();
    };
    c.gamma = num("gamma", c.gamma);
    c.lambda1 = num("lambda1", c.lambda1);
    c.lambdaG = num("lambdaG", c.lambdaG);
    c.lr0 = num("lr0", c.lr0);
    c.steps = integer("steps", c.steps);
    c.batch = integer("batch", c.batch);
    c.refit_steps = integer("refit_steps", c.refit_steps);
    if (j.contains("seed")) {
        const json& s = j.at("seed");
        if (s.is_number_unsigned()) {
            c.seed = s.get<std::uint64_t>();
        } else if (s.is_number_integer() && s.get<std::int64_t>() >= 0) {
            c.seed = static_cast<std::uint64_t>(s.get<std::int64_t>());
        } else {
            throw config_error(where + ": field 'seed' must be a nonnegative integer");
        }
    }
    if (j.contains("lr_schedule")) {
        if (!j.at("lr_schedule").is_string()) {
            throw config_error(where + ": field 'lr_schedule' is not a string");
        }
        c.lr_schedule = lr_schedule_from_name(j.at("lr_schedule").get<std::string>());
    }
    if (j.contains("prox_scaling")) {
        if (!j.at("prox_scaling").is_string()) {
            throw config_error(where + ": field 'prox_scaling' is not a string");
        }
        c.prox_scaling = prox_scaling_from_name(j.at("prox_scaling").get<std::string>());
    }
    c.validate();
    return c;
}

}  // namespace actsteer
