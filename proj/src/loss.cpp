#include "actsteer/loss.hpp"

#include <cmath>

namespace actsteer {

Tensor sliced_w2(const Tensor& u, const Tensor& v) {
    if (!u.same_shape(v)) {
        throw shape_error("sliced_w2: shapes " + std::to_string(u.rows) + "x" +
                          std::to_string(u.cols) + " and " + std::to_string(v.rows) + "x" +
                          std::to_string(v.cols) + " differ");
    }
    if (u.rows == 0) throw config_error("sliced_w2: empty inputs");

    Tensor u_sorted = sort_columns(u).values;
    // target side is a constant: sort its plain values and negate
    std::vector<double> neg = sort_columns(v.detached()).values.data;
    for (double& x : neg) x = -x;
    Tensor v_neg = Tensor::from_data(v.rows, v.cols, std::move(neg));

    Tensor diff = add(u_sorted, v_neg);
    Tensor sq = mul(diff, diff);
    Tensor total = sum_all(sq);
    const double inv_n = 1.0 / static_cast<double>(u.rows);
    return affine(total, Tensor::row_vector({inv_n}), Tensor::row_vector({0.0}));
}

Tensor global_cost_tracked(const ActivationTrace& source, const ActivationTrace& target,
                           std::vector<double>* per_layer) {
    source.validate_layout(target);
    if (source.per_hook.empty()) throw config_error("global_cost: no hooks");
    if (per_layer != nullptr) per_layer->clear();

    Tensor total;
    for (std::size_t h = 0; h < source.per_hook.size(); ++h) {
        Tensor term = sliced_w2(source.per_hook[h], target.per_hook[h]);
        if (per_layer != nullptr) per_layer->push_back(term.data[0]);
        total = h == 0 ? term : add(total, term);
    }
    return total;
}

LossBreakdown global_cost(const ActivationTrace& source, const ActivationTrace& target) {
    LossBreakdown out;
    Tensor total = global_cost_tracked(source.detached(), target.detached(),
                                       &out.per_layer_delta);
    out.total_cost = total.data[0];
    out.objective = out.total_cost;
    return out;
}

namespace {

void accumulate_norms(const std::vector<double>& values, double center, double& l1,
                      double& l2sq) {
    for (double v : values) {
        const double c = v - center;
        l1 += std::fabs(c);
        l2sq += c * c;
    }
}

}  // namespace

std::pair<double, double> regularizer_values(const TransportStack& stack, double lambda1,
                                             double lambdaG) {
    if (!(lambda1 >= 0.0) || !(lambdaG >= 0.0)) {
        throw config_error("regularizer_values: weights must be >= 0");
    }
    stack.validate();
    double r1 = 0.0, rg = 0.0;
    for (const AffineMap& m : stack.maps) {
        double l1 = 0.0, w2 = 0.0, b2 = 0.0, b1 = 0.0;
        accumulate_norms(m.omega, 1.0, l1, w2);
        accumulate_norms(m.bias, 0.0, b1, b2);
        r1 += l1 + b1;
        rg += std::sqrt(static_cast<double>(m.dim())) * (std::sqrt(w2) + std::sqrt(b2));
    }
    return {r1, rg};
}

void fill_regularizers(LossBreakdown& breakdown, const TransportStack& stack, double gamma,
                       double lambda1, double lambdaG) {
    const auto [r1, rg] = regularizer_values(stack, lambda1, lambdaG);
    breakdown.reg_l1 = r1;
    breakdown.reg_group = rg;
    breakdown.objective = breakdown.total_cost + gamma * (lambda1 * r1 + lambdaG * rg);
}

}  // namespace actsteer
