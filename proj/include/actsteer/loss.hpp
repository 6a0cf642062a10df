#pragma once

#include <utility>
#include <vector>

#include "actsteer/model.hpp"
#include "actsteer/tensor.hpp"
#include "actsteer/transport.hpp"

namespace actsteer {

struct LossBreakdown {
    std::vector<double> per_layer_delta;
    double total_cost = 0.0;  // sum of per_layer_delta
    double reg_l1 = 0.0;
    double reg_group = 0.0;
    double objective = 0.0;  // total_cost + gamma (lambda1 reg_l1 + lambdaG reg_group)
};

/// Squared 2-Wasserstein distance between the columns of U and V, summed over
/// columns: both are sorted ascending per column and paired by rank, then
/// (1/n) sum of squared differences. Returns a 1x1 tensor; gradients flow
/// into U through its sort permutation, V is treated as constant.
Tensor sliced_w2(const Tensor& u, const Tensor& v);

/// Sum of sliced_w2 over all hooks, in hook order. Tracked variant returns
/// the 1x1 loss tensor for backward(); per_layer (optional) receives each
/// hook's term.
Tensor global_cost_tracked(const ActivationTrace& source, const ActivationTrace& target,
                           std::vector<double>* per_layer = nullptr);

/// Eager evaluation; fills per_layer_delta and total_cost only (regularizers
/// and objective are zero — see regularizer_values and fill_regularizers).
LossBreakdown global_cost(const ActivationTrace& source, const ActivationTrace& target);

/// Raw regularizer values of the stack:
///   first  = sum over hooks of |omega - 1|_1 + |bias|_1
///   second = sum over hooks of sqrt(d) (|omega - 1|_2 + |bias|_2)
/// lambda1/lambdaG are validated (>= 0) but not multiplied in; weighting
/// happens in the objective.
std::pair<double, double> regularizer_values(const TransportStack& stack, double lambda1,
                                             double lambdaG);

void fill_regularizers(LossBreakdown& breakdown, const TransportStack& stack, double gamma,
                       double lambda1, double lambdaG);

}  // namespace actsteer
