#include "actsteer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace actsteer {
namespace {

bool g_finite_checks = true;

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw numeric_error(std::string("non-finite value in ") + what);
        }
    }
}

void check_finite_op(const std::vector<double>& v, const char* what) {
    if (g_finite_checks) check_finite(v, what);
}

std::string shape_str(std::size_t r, std::size_t c) {
    std::ostringstream os;
    os << r << "x" << c;
    return os.str();
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw shape_error(std::string(op) + ": incompatible shapes " +
                      shape_str(a.rows, a.cols) + " and " + shape_str(b.rows, b.cols));
}

bool broadcast_ok(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) || (b.rows == 1 && b.cols == a.cols);
}

// ----- raw forward kernels (shared by the op functions and tape replay) -----

std::vector<double> k_matmul(const std::vector<double>& a, std::size_t n, std::size_t k,
                             const std::vector<double>& w, std::size_t m) {
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * w[p * m + j];
            out[i * m + j] = acc;
        }
    }
    return out;
}

std::vector<double> k_add(const std::vector<double>& a, std::size_t n, std::size_t d,
                          const std::vector<double>& b, bool broadcast) {
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = a[i * d + j] + b[broadcast ? j : i * d + j];
    return out;
}

std::vector<double> k_mul(const std::vector<double>& a, std::size_t n, std::size_t d,
                          const std::vector<double>& b, bool broadcast) {
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = a[i * d + j] * b[broadcast ? j : i * d + j];
    return out;
}

std::vector<double> k_affine(const std::vector<double>& x, std::size_t n, std::size_t d,
                             const std::vector<double>& scale, const std::vector<double>& shift) {
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = scale[j] * x[i * d + j] + shift[j];
    return out;
}

std::vector<double> k_tanh(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    return out;
}

std::vector<double> k_gelu(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
        out[i] = 0.5 * v * (1.0 + std::tanh(u));
    }
    return out;
}

std::vector<double> k_relu(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

std::vector<double> k_layernorm(const std::vector<double>& x, std::size_t n, std::size_t d,
                                const std::vector<double>& gain, const std::vector<double>& bias,
                                double eps) {
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = gain[j] * (row[j] - mean) * inv + bias[j];
    }
    return out;
}

void k_sort_columns(const std::vector<double>& x, std::size_t n, std::size_t d,
                    std::vector<double>& sorted, std::vector<std::size_t>& perm) {
    sorted.resize(n * d);
    perm.resize(n * d);
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < d; ++j) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return x[a * d + j] < x[b * d + j];
        });
        for (std::size_t i = 0; i < n; ++i) {
            perm[i * d + j] = order[i];
            sorted[i * d + j] = x[order[i] * d + j];
        }
    }
}

std::vector<double> k_sum_all(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v;
    return {acc};
}

}  // namespace

// ----- Tensor -----

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
    Tensor t;
    t.rows = rows;
    t.cols = cols;
    t.data.assign(rows * cols, 0.0);
    return t;
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
    if (!std::isfinite(value)) throw numeric_error("Tensor::full: non-finite fill value");
    Tensor t;
    t.rows = rows;
    t.cols = cols;
    t.data.assign(rows * cols, value);
    return t;
}

Tensor Tensor::from_data(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) {
        throw shape_error("Tensor::from_data: " + std::to_string(values.size()) +
                          " values for shape " + shape_str(rows, cols));
    }
    check_finite(values, "Tensor::from_data");
    Tensor t;
    t.rows = rows;
    t.cols = cols;
    t.data = std::move(values);
    return t;
}

Tensor Tensor::row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return from_data(1, n, std::move(values));
}

Tensor Tensor::detached() const {
    Tensor t;
    t.rows = rows;
    t.cols = cols;
    t.data = data;
    return t;
}

// ----- Tape -----

Tensor Tape::leaf(const Tensor& values, bool requires_grad) {
    check_finite(values.data, "Tape::leaf");
    TapeNode node;
    node.kind = OpKind::leaf;
    node.rows = values.rows;
    node.cols = values.cols;
    node.value = values.data;
    node.requires_grad = requires_grad;
    Tensor out = values.detached();
    out.tape = this;
    out.node = record(std::move(node));
    return out;
}

int Tape::record(TapeNode node) {
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size() - 1);
}

namespace {

// Operands of one primitive must live on a single tape (or none).
Tape* common_tape(std::initializer_list<const Tensor*> operands) {
    Tape* tape = nullptr;
    for (const Tensor* t : operands) {
        if (!t->attached()) continue;
        if (tape == nullptr) {
            tape = t->tape;
        } else if (tape != t->tape) {
            throw config_error("operands recorded on different tapes");
        }
    }
    return tape;
}

int ensure_node(Tape& tape, const Tensor& t) {
    if (t.attached()) return t.node;
    return tape.leaf(t, false).node;
}

Tensor raw_tensor(std::size_t rows, std::size_t cols, std::vector<double> value) {
    Tensor out;
    out.rows = rows;
    out.cols = cols;
    out.data = std::move(value);
    return out;
}

// Builds the node (resolving unattached operands into constant leaves first,
// so parents always precede the node). The caller records it.
TapeNode build_node(Tape& tape, OpKind kind, const Tensor& out,
                    std::initializer_list<const Tensor*> parents,
                    double aux = 0.0, std::vector<std::size_t> perm = {}) {
    TapeNode node;
    node.kind = kind;
    node.rows = out.rows;
    node.cols = out.cols;
    node.value = out.data;
    node.aux = aux;
    node.perm = std::move(perm);
    for (const Tensor* p : parents) {
        node.parents[node.n_parents++] = ensure_node(tape, *p);
    }
    return node;
}

}  // namespace

// ----- primitives -----

Tensor matmul(const Tensor& a, const Tensor& w) {
    if (a.cols != w.rows) shape_fail("matmul", a, w);
    auto value = k_matmul(a.data, a.rows, a.cols, w.data, w.cols);
    check_finite_op(value, "matmul");
    Tensor out = raw_tensor(a.rows, w.cols, std::move(value));
    if (Tape* tape = common_tape({&a, &w})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::matmul, out, {&a, &w}));
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!broadcast_ok(a, b)) shape_fail("add", a, b);
    auto value = k_add(a.data, a.rows, a.cols, b.data, !a.same_shape(b));
    check_finite_op(value, "add");
    Tensor out = raw_tensor(a.rows, a.cols, std::move(value));
    if (Tape* tape = common_tape({&a, &b})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::add, out, {&a, &b}));
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!broadcast_ok(a, b)) shape_fail("mul", a, b);
    auto value = k_mul(a.data, a.rows, a.cols, b.data, !a.same_shape(b));
    check_finite_op(value, "mul");
    Tensor out = raw_tensor(a.rows, a.cols, std::move(value));
    if (Tape* tape = common_tape({&a, &b})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::mul, out, {&a, &b}));
    }
    return out;
}

Tensor affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    if (scale.rows != 1 || scale.cols != x.cols) shape_fail("affine scale", x, scale);
    if (shift.rows != 1 || shift.cols != x.cols) shape_fail("affine shift", x, shift);
    auto value = k_affine(x.data, x.rows, x.cols, scale.data, shift.data);
    check_finite_op(value, "affine");
    Tensor out = raw_tensor(x.rows, x.cols, std::move(value));
    if (Tape* tape = common_tape({&x, &scale, &shift})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::affine, out, {&x, &scale, &shift}));
    }
    return out;
}

Tensor tanh_t(const Tensor& x) {
    auto value = k_tanh(x.data);
    check_finite_op(value, "tanh");
    Tensor out = raw_tensor(x.rows, x.cols, std::move(value));
    if (Tape* tape = common_tape({&x})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::tanh_op, out, {&x}));
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    auto value = k_gelu(x.data);
    check_finite_op(value, "gelu");
    Tensor out = raw_tensor(x.rows, x.cols, std::move(value));
    if (Tape* tape = common_tape({&x})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::gelu_op, out, {&x}));
    }
    return out;
}

Tensor relu(const Tensor& x) {
    auto value = k_relu(x.data);
    check_finite_op(value, "relu");
    Tensor out = raw_tensor(x.rows, x.cols, std::move(value));
    if (Tape* tape = common_tape({&x})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::relu_op, out, {&x}));
    }
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (!(eps > 0.0)) throw config_error("layernorm: eps must be > 0");
    if (gain.rows != 1 || gain.cols != x.cols) shape_fail("layernorm gain", x, gain);
    if (bias.rows != 1 || bias.cols != x.cols) shape_fail("layernorm bias", x, bias);
    auto value = k_layernorm(x.data, x.rows, x.cols, gain.data, bias.data, eps);
    check_finite_op(value, "layernorm");
    Tensor out = raw_tensor(x.rows, x.cols, std::move(value));
    if (Tape* tape = common_tape({&x, &gain, &bias})) {
        out.tape = tape;
        out.node = tape->record(
            build_node(*tape, OpKind::layernorm, out, {&x, &gain, &bias}, eps));
    }
    return out;
}

SortResult sort_columns(const Tensor& x) {
    std::vector<double> sorted;
    std::vector<std::size_t> perm;
    k_sort_columns(x.data, x.rows, x.cols, sorted, perm);
    SortResult res;
    res.perm = perm;
    res.values = raw_tensor(x.rows, x.cols, std::move(sorted));
    if (Tape* tape = common_tape({&x})) {
        res.values.tape = tape;
        res.values.node = tape->record(
            build_node(*tape, OpKind::sort_cols, res.values, {&x}, 0.0, std::move(perm)));
    }
    return res;
}

Tensor sum_all(const Tensor& x) {
    auto value = k_sum_all(x.data);
    check_finite_op(value, "sum_all");
    Tensor out = raw_tensor(1, 1, std::move(value));
    if (Tape* tape = common_tape({&x})) {
        out.tape = tape;
        out.node = tape->record(build_node(*tape, OpKind::sum_all, out, {&x}));
    }
    return out;
}

// ----- backward -----

void Tape::backward(const Tensor& loss) {
    if (loss.tape != this || loss.node < 0) {
        throw config_error("backward: loss is not recorded on this tape");
    }
    if (loss.rows != 1 || loss.cols != 1) {
        throw config_error("backward: loss must be a 1x1 scalar, got " +
                           shape_str(loss.rows, loss.cols));
    }
    grads_.assign(nodes_.size(), {});
    std::vector<char> touched(nodes_.size(), 0);
    grads_[loss.node] = {1.0};
    touched[loss.node] = 1;

    auto grad_buf = [&](int idx) -> std::vector<double>& {
        auto& g = grads_[idx];
        if (g.empty()) g.assign(nodes_[idx].value.size(), 0.0);
        touched[idx] = 1;
        return g;
    };

    for (int i = loss.node; i >= 0; --i) {
        if (!touched[i] || nodes_[i].kind == OpKind::leaf) continue;
        const TapeNode& node = nodes_[i];
        const std::vector<double>& g = grads_[i];
        const std::size_t n = node.rows, d = node.cols;
        switch (node.kind) {
            case OpKind::matmul: {
                const TapeNode& pa = nodes_[node.parents[0]];
                const TapeNode& pw = nodes_[node.parents[1]];
                const std::size_t k = pa.cols, m = pw.cols;
                auto& ga = grad_buf(node.parents[0]);
                auto& gw = grad_buf(node.parents[1]);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j)
                            acc += g[r * m + j] * pw.value[p * m + j];
                        ga[r * k + p] += acc;
                    }
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < m; ++j) {
                        double acc = 0.0;
                        for (std::size_t r = 0; r < n; ++r)
                            acc += pa.value[r * k + p] * g[r * m + j];
                        gw[p * m + j] += acc;
                    }
                break;
            }
            case OpKind::add: {
                const TapeNode& pb = nodes_[node.parents[1]];
                auto& ga = grad_buf(node.parents[0]);
                auto& gb = grad_buf(node.parents[1]);
                const bool bcast = pb.rows == 1 && n != 1;
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < d; ++j) {
                        ga[r * d + j] += g[r * d + j];
                        gb[bcast ? j : r * d + j] += g[r * d + j];
                    }
                break;
            }
            case OpKind::mul: {
                const TapeNode& pa = nodes_[node.parents[0]];
                const TapeNode& pb = nodes_[node.parents[1]];
                auto& ga = grad_buf(node.parents[0]);
                auto& gb = grad_buf(node.parents[1]);
                const bool bcast = pb.rows == 1 && n != 1;
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < d; ++j) {
                        const double bv = pb.value[bcast ? j : r * d + j];
                        ga[r * d + j] += g[r * d + j] * bv;
                        gb[bcast ? j : r * d + j] += g[r * d + j] * pa.value[r * d + j];
                    }
                break;
            }
            case OpKind::affine: {
                const TapeNode& px = nodes_[node.parents[0]];
                const TapeNode& ps = nodes_[node.parents[1]];
                auto& gx = grad_buf(node.parents[0]);
                auto& gs = grad_buf(node.parents[1]);
                auto& gh = grad_buf(node.parents[2]);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += g[r * d + j] * ps.value[j];
                        gs[j] += g[r * d + j] * px.value[r * d + j];
                        gh[j] += g[r * d + j];
                    }
                break;
            }
            case OpKind::tanh_op: {
                auto& gx = grad_buf(node.parents[0]);
                for (std::size_t t = 0; t < g.size(); ++t)
                    gx[t] += g[t] * (1.0 - node.value[t] * node.value[t]);
                break;
            }
            case OpKind::gelu_op: {
                const TapeNode& px = nodes_[node.parents[0]];
                auto& gx = grad_buf(node.parents[0]);
                for (std::size_t t = 0; t < g.size(); ++t) {
                    const double v = px.value[t];
                    const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
                    const double th = std::tanh(u);
                    const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * v * v);
                    gx[t] += g[t] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
                }
                break;
            }
            case OpKind::relu_op: {
                const TapeNode& px = nodes_[node.parents[0]];
                auto& gx = grad_buf(node.parents[0]);
                // subgradient 0 at the kink
                for (std::size_t t = 0; t < g.size(); ++t)
                    if (px.value[t] > 0.0) gx[t] += g[t];
                break;
            }
            case OpKind::layernorm: {
                const TapeNode& px = nodes_[node.parents[0]];
                const TapeNode& pg = nodes_[node.parents[1]];
                auto& gx = grad_buf(node.parents[0]);
                auto& ggain = grad_buf(node.parents[1]);
                auto& gbias = grad_buf(node.parents[2]);
                const double eps = node.aux;
                std::vector<double> y(d), dy(d);
                for (std::size_t r = 0; r < n; ++r) {
                    const double* row = px.value.data() + r * d;
                    double mean = 0.0;
                    for (std::size_t j = 0; j < d; ++j) mean += row[j];
                    mean /= static_cast<double>(d);
                    double var = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double c = row[j] - mean;
                        var += c * c;
                    }
                    var /= static_cast<double>(d);
                    const double inv = 1.0 / std::sqrt(var + eps);
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        y[j] = (row[j] - mean) * inv;
                        dy[j] = g[r * d + j] * pg.value[j];
                        m1 += dy[j];
                        m2 += dy[j] * y[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += inv * (dy[j] - m1 - y[j] * m2);
                        ggain[j] += g[r * d + j] * y[j];
                        gbias[j] += g[r * d + j];
                    }
                }
                break;
            }
            case OpKind::sort_cols: {
                auto& gx = grad_buf(node.parents[0]);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        gx[node.perm[r * d + j] * d + j] += g[r * d + j];
                break;
            }
            case OpKind::sum_all: {
                auto& gx = grad_buf(node.parents[0]);
                for (std::size_t t = 0; t < gx.size(); ++t) gx[t] += g[0];
                break;
            }
            case OpKind::leaf:
                break;
        }
    }

    if (g_finite_checks) {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].kind == OpKind::leaf && nodes_[i].requires_grad && !grads_[i].empty())
                check_finite(grads_[i], "backward gradient");
        }
    }
}

Tensor Tape::grad(const Tensor& t) const {
    if (t.tape != this || t.node < 0) {
        throw config_error("grad: tensor is not recorded on this tape");
    }
    const TapeNode& node = nodes_[t.node];
    Tensor out = Tensor::zeros(node.rows, node.cols);
    if (static_cast<std::size_t>(t.node) < grads_.size() && !grads_[t.node].empty()) {
        out.data = grads_[t.node];
    }
    return out;
}

std::vector<double> Tape::forward_of(const TapeNode& node) const {
    auto pv = [&](int slot) -> const std::vector<double>& {
        return nodes_[node.parents[slot]].value;
    };
    auto pshape = [&](int slot) -> const TapeNode& { return nodes_[node.parents[slot]]; };
    switch (node.kind) {
        case OpKind::leaf:
            return node.value;
        case OpKind::matmul:
            return k_matmul(pv(0), pshape(0).rows, pshape(0).cols, pv(1), pshape(1).cols);
        case OpKind::add:
            return k_add(pv(0), node.rows, node.cols, pv(1),
                         pshape(1).rows == 1 && node.rows != 1);
        case OpKind::mul:
            return k_mul(pv(0), node.rows, node.cols, pv(1),
                         pshape(1).rows == 1 && node.rows != 1);
        case OpKind::affine:
            return k_affine(pv(0), node.rows, node.cols, pv(1), pv(2));
        case OpKind::tanh_op:
            return k_tanh(pv(0));
        case OpKind::gelu_op:
            return k_gelu(pv(0));
        case OpKind::relu_op:
            return k_relu(pv(0));
        case OpKind::layernorm:
            return k_layernorm(pv(0), node.rows, node.cols, pv(1), pv(2), node.aux);
        case OpKind::sort_cols: {
            std::vector<double> sorted;
            std::vector<std::size_t> perm;
            k_sort_columns(pv(0), node.rows, node.cols, sorted, perm);
            return sorted;
        }
        case OpKind::sum_all:
            return k_sum_all(pv(0));
    }
    return {};
}

bool Tape::replay_matches() const {
    for (const TapeNode& node : nodes_) {
        if (node.kind == OpKind::leaf) continue;
        if (forward_of(node) != node.value) return false;
    }
    return true;
}

// ----- finite differences -----

std::vector<double> finite_diff_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& at, double h) {
    if (!(h > 0.0)) throw config_error("finite_diff_gradient: h must be > 0");
    std::vector<double> x = at;
    std::vector<double> grad(at.size());
    for (std::size_t i = 0; i < at.size(); ++i) {
        x[i] = at[i] + h;
        const double fp = f(x);
        x[i] = at[i] - h;
        const double fm = f(x);
        x[i] = at[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace actsteer
