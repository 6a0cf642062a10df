#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "actsteer/common.hpp"

namespace actsteer {

class Tape;

/// Dense row-major 2-D array of doubles, optionally attached to a Tape node.
/// Copies share the node handle (tape nodes are immutable once recorded).
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    Tape* tape = nullptr;
    int node = -1;

    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor full(std::size_t rows, std::size_t cols, double value);
    /// Validates length and finiteness.
    static Tensor from_data(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor row_vector(std::vector<double> values);

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::size_t size() const { return rows * cols; }
    bool same_shape(const Tensor& other) const {
        return rows == other.rows && cols == other.cols;
    }
    bool attached() const { return tape != nullptr && node >= 0; }
    /// Value-only copy, no tape handle.
    Tensor detached() const;
};

/// When enabled (the default), every primitive checks its output for
/// NaN/Inf and throws numeric_error. Factories always check.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

enum class OpKind {
    leaf,
    matmul,
    add,        // rhs same shape or 1 x d broadcast over rows
    mul,        // same broadcast rule
    affine,     // scale, shift are 1 x d; out = scale (.) x + shift per row
    tanh_op,
    gelu_op,    // tanh approximation, see gelu()
    relu_op,
    layernorm,  // aux = eps; parents: x, gain, bias
    sort_cols,  // perm saved; backward scatters through it
    sum_all,    // 1 x 1 output
};

struct TapeNode {
    OpKind kind = OpKind::leaf;
    std::array<int, 3> parents{-1, -1, -1};
    int n_parents = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;        // forward output
    std::vector<std::size_t> perm;    // sort_cols: perm[i*cols+j] = source row
    double aux = 0.0;                 // layernorm eps
    bool requires_grad = false;       // leaves only
};

/// Record of primitive applications in topological order. Single-writer
/// during the forward pass; immutable afterwards.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Record a leaf holding a copy of `values`. Gradients accumulate into
    /// it only when requires_grad is set.
    Tensor leaf(const Tensor& values, bool requires_grad);

    /// Reverse accumulation from a scalar (1x1) loss. May be called again;
    /// gradients are reset each time.
    void backward(const Tensor& loss);

    /// Gradient of the last backward() w.r.t. the node behind `t`
    /// (zeros when the node was never reached).
    Tensor grad(const Tensor& t) const;

    /// Re-runs every non-leaf node from its parents' stored values and
    /// compares bitwise with the stored output.
    bool replay_matches() const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    friend Tensor matmul(const Tensor&, const Tensor&);
    friend Tensor add(const Tensor&, const Tensor&);
    friend Tensor mul(const Tensor&, const Tensor&);
    friend Tensor affine(const Tensor&, const Tensor&, const Tensor&);
    friend Tensor tanh_t(const Tensor&);
    friend Tensor gelu(const Tensor&);
    friend Tensor relu(const Tensor&);
    friend Tensor layernorm(const Tensor&, const Tensor&, const Tensor&, double);
    friend struct SortResult sort_columns(const Tensor&);
    friend Tensor sum_all(const Tensor&);

    int record(TapeNode node);
    std::vector<double> forward_of(const TapeNode& node) const;

    std::vector<TapeNode> nodes_;
    std::vector<std::vector<double>> grads_;
};

struct SortResult {
    Tensor values;                   // each column ascending
    std::vector<std::size_t> perm;   // perm[i*cols+j] = original row index
};

/// Primitives. Eager when no operand is attached to a tape; otherwise the
/// result is recorded (unattached operands become constant leaves).
Tensor matmul(const Tensor& a, const Tensor& w);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// out[r][c] = scale[c] * x[r][c] + shift[c]; scale and shift are 1 x cols.
Tensor affine(const Tensor& x, const Tensor& scale, const Tensor& shift);
Tensor tanh_t(const Tensor& x);
/// gelu(x) = 0.5 x (1 + tanh(c0 (x + c1 x^3))),
/// c0 = sqrt(2/pi) = 0.7978845608028654, c1 = 0.044715.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
/// Per-row standardization with gain/bias (both 1 x cols), population
/// variance (1/d), eps > 0. Full VJP through mean and variance.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
/// Stable column-wise ascending sort; ties keep original row order. The
/// backward pass scatters gradients through the frozen permutation.
SortResult sort_columns(const Tensor& x);
Tensor sum_all(const Tensor& x);

/// Central differences (f(x+h e_i) - f(x-h e_i)) / (2h). Unreliable at
/// kinks of f (|.| at 0, relu at 0, sort ties).
std::vector<double> finite_diff_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& at, double h);

}  // namespace actsteer
