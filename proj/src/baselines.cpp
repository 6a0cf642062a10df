#include "actsteer/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace actsteer {

namespace {

void check_fit_inputs(const FrozenModel& model, const Tensor& source,
                      const ActivationTrace& target, const char* who) {
    model.validate();
    if (source.rows == 0) throw config_error(std::string(who) + ": no source samples");
    if (target.per_hook.size() != model.hooks.size()) {
        throw config_error(std::string(who) + ": target trace hook count != model hook count");
    }
    const auto dims = model.hook_dims();
    for (std::size_t h = 0; h < dims.size(); ++h) {
        if (target.per_hook[h].cols != dims[h]) {
            throw shape_error(std::string(who) + ": target width mismatch at hook " +
                              std::to_string(h));
        }
    }
}

std::vector<double> column_means(const Tensor& t) {
    std::vector<double> mean(t.cols, 0.0);
    for (std::size_t r = 0; r < t.rows; ++r)
        for (std::size_t c = 0; c < t.cols; ++c) mean[c] += t.at(r, c);
    for (double& m : mean) m /= static_cast<double>(t.rows);
    return mean;
}

std::vector<double> sorted_column(const Tensor& t, std::size_t c) {
    std::vector<double> col(t.rows);
    for (std::size_t r = 0; r < t.rows; ++r) col[r] = t.at(r, c);
    std::sort(col.begin(), col.end());
    return col;
}

struct ColumnStats {
    double mean = 0.0;
    double var = 0.0;  // population
};

ColumnStats stats_of(const std::vector<double>& col) {
    ColumnStats s;
    for (double v : col) s.mean += v;
    s.mean /= static_cast<double>(col.size());
    for (double v : col) {
        const double c = v - s.mean;
        s.var += c * c;
    }
    s.var /= static_cast<double>(col.size());
    return s;
}

bool degenerate(const ColumnStats& s) {
    return s.var <= 1e-12 * (1.0 + s.mean * s.mean);
}

}  // namespace

TransportStack fit_mean_shift(const FrozenModel& model, const Tensor& source_samples,
                              const ActivationTrace& target_trace) {
    check_fit_inputs(model, source_samples, target_trace, "fit_mean_shift");
    if (target_trace.rows() == 0) throw config_error("fit_mean_shift: no target rows");

    const ActivationTrace source_trace = precompute_targets(model, source_samples);
    TransportStack stack = identity_stack(model.hook_dims());
    for (std::size_t h = 0; h < stack.maps.size(); ++h) {
        const auto src_mean = column_means(source_trace.per_hook[h]);
        const auto tgt_mean = column_means(target_trace.per_hook[h]);
        for (std::size_t j = 0; j < stack.maps[h].dim(); ++j) {
            stack.maps[h].bias[j] = tgt_mean[j] - src_mean[j];
        }
    }
    return stack;
}

TransportStack fit_mean_shift(const FrozenModel& model, const Tensor& source_samples,
                              const Tensor& target_samples) {
    return fit_mean_shift(model, source_samples, precompute_targets(model, target_samples));
}

TransportStack fit_sequential_affine(const FrozenModel& model, const Tensor& source_samples,
                                     const ActivationTrace& target_trace, AffineFitKind fit) {
    check_fit_inputs(model, source_samples, target_trace, "fit_sequential_affine");
    if (source_samples.rows < 2 || target_trace.rows() < 2) {
        throw config_error("fit_sequential_affine: needs at least 2 samples per side");
    }

    TransportStack stack = identity_stack(model.hook_dims());
    for (std::size_t h = 0; h < stack.maps.size(); ++h) {
        // maps fitted so far are live; the map at h is still identity, so the
        // trace entry at h is this hook's pre-intervention activation
        const ActivationTrace trace =
            forward_with_stack(model, stack, source_samples, 1.0).trace;
        AffineMap& m = stack.maps[h];
        for (std::size_t j = 0; j < m.dim(); ++j) {
            const auto s = sorted_column(trace.per_hook[h], j);
            const auto t = sorted_column(target_trace.per_hook[h], j);
            const ColumnStats ss = stats_of(s), ts = stats_of(t);
            if (degenerate(ss)) {
                m.omega[j] = 1.0;
                m.bias[j] = ts.mean - ss.mean;
                continue;
            }
            if (fit == AffineFitKind::moment_match) {
                m.omega[j] = std::sqrt(ts.var / ss.var);
            } else {
                // rank-paired least squares; counts must match for pairing
                if (s.size() != t.size()) {
                    throw config_error("fit_sequential_affine: source and target sample "
                                      "counts differ (" + std::to_string(s.size()) + " vs " +
                                      std::to_string(t.size()) + ")");
                }
                double cov = 0.0;
                for (std::size_t r = 0; r < s.size(); ++r) {
                    cov += (s[r] - ss.mean) * (t[r] - ts.mean);
                }
                cov /= static_cast<double>(s.size());
                m.omega[j] = cov / ss.var;
            }
            m.bias[j] = ts.mean - m.omega[j] * ss.mean;
        }
    }
    return stack;
}

TransportStack fit_sequential_affine(const FrozenModel& model, const Tensor& source_samples,
                                     const Tensor& target_samples, AffineFitKind fit) {
    return fit_sequential_affine(model, source_samples,
                                 precompute_targets(model, target_samples), fit);
}

EvalReport evaluate(const TransportStack& stack, const FrozenModel& model,
                    const Tensor& heldout_source, const ActivationTrace& heldout_target,
                    double lambda) {
    check_fit_inputs(model, heldout_source, heldout_target, "evaluate");
    const ActivationTrace trace =
        forward_with_stack(model, stack, heldout_source, lambda).trace;
    EvalReport rep;
    rep.loss = global_cost(trace, heldout_target);
    const auto [r1, rg] = regularizer_values(stack, 0.0, 0.0);
    rep.loss.reg_l1 = r1;
    rep.loss.reg_group = rg;
    rep.support_report = support(stack, 0.0);
    return rep;
}

EvalReport evaluate(const TransportStack& stack, const FrozenModel& model,
                    const Tensor& heldout_source, const Tensor& heldout_target_samples,
                    double lambda) {
    return evaluate(stack, model, heldout_source,
                    precompute_targets(model, heldout_target_samples), lambda);
}

}  // namespace actsteer
