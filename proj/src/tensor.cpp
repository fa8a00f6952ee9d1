#include "poem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "poem/error.hpp"
#include "poem/rng.hpp"

namespace poem::tensor {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) fail(ErrorCode::invalid_argument, "tensor shape must have at least one axis");
    for (int d : shape) {
        if (d <= 0) fail(ErrorCode::invalid_argument, "tensor shape " + shape_str(shape) + " has a non-positive extent");
    }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
        fail(ErrorCode::shape_mismatch, "tensor shape " + shape_str(shape_) + " does not match " +
                                            std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::matrix(int rows, int cols, std::vector<float> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::row(std::vector<float> data) {
    const int n = static_cast<int>(data.size());
    return Tensor({1, n}, std::move(data));
}

Tensor Tensor::scalar(float value) { return Tensor({1, 1}, std::vector<float>{value}); }

float Tensor::item() const {
    if (data_.size() != 1) fail(ErrorCode::non_scalar_loss, "item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float x) { return std::isfinite(x); });
}

bool operator==(const Tensor& a, const Tensor& b) noexcept {
    if (a.shape_ != b.shape_) return false;
    // Bitwise comparison so that -0.0 != 0.0 and NaN payloads compare.
    return std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), [](float x, float y) {
        std::uint32_t ux = 0;
        std::uint32_t uy = 0;
        std::memcpy(&ux, &x, sizeof ux);
        std::memcpy(&uy, &y, sizeof uy);
        return ux == uy;
    });
}

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::input: return "input";
        case OpKind::constant: return "constant";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::minimum: return "minimum";
        case OpKind::concat: return "concat";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::tanh: return "tanh";
        case OpKind::relu: return "relu";
        case OpKind::softmax: return "softmax";
        case OpKind::l2_normalize: return "l2-normalize";
        case OpKind::renormalize: return "renormalize";
        case OpKind::bce_loss: return "bce-loss";
        case OpKind::ce_loss: return "ce-loss";
        case OpKind::slice: return "slice";
        case OpKind::transpose: return "transpose";
        case OpKind::broadcast: return "broadcast";
    }
    return "?";
}

// ---------------------------------------------------------------- Bindings

Bindings::Bindings(std::initializer_list<std::pair<const std::string, Tensor>> init) {
    for (const auto& [name, value] : init) set(name, value);
}

Bindings::Bindings(const Bindings& other) { *this = other; }

Bindings& Bindings::operator=(const Bindings& other) {
    if (this == &other) return *this;
    refs_.clear();
    owned_.clear();
    for (const auto& [name, ptr] : other.refs_) set(name, *ptr);
    return *this;
}

void Bindings::bind(const std::string& name, const Tensor& ref) { refs_[name] = &ref; }

void Bindings::set(const std::string& name, Tensor value) {
    owned_.push_back(std::move(value));
    refs_[name] = &owned_.back();
}

const Tensor* Bindings::find(const std::string& name) const {
    auto it = refs_.find(name);
    return it == refs_.end() ? nullptr : it->second;
}

// ---------------------------------------------------------------- graph

namespace {

struct AxisView {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
    AxisView v;
    for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(shape[i]);
    v.len = static_cast<std::size_t>(shape[axis]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
        v.inner *= static_cast<std::size_t>(shape[i]);
    }
    return v;
}

Shape ones_like(const Shape& shape) { return Shape(shape.size(), 1); }

float stable_sigmoid(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
}

}  // namespace

Var Graph::add_node(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::input(const std::string& name) {
    Node n;
    n.op = OpKind::input;
    n.name = name;
    return add_node(std::move(n));
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = OpKind::constant;
    n.value = std::move(value);
    return add_node(std::move(n));
}

Var make_node(OpKind op, std::vector<Var> inputs, int axis, int begin, int end, float scalar) {
    Graph* g = inputs.front().graph();
    Graph::Node n;
    n.op = op;
    n.axis = axis;
    n.begin = begin;
    n.end = end;
    n.scalar = scalar;
    for (const Var& v : inputs) {
        if (v.graph() != g) fail(ErrorCode::invalid_argument, std::string(op_name(op)) + ": inputs from different graphs");
        n.inputs.push_back(v.id());
    }
    return g->add_node(std::move(n));
}

const Tensor& Graph::value(Var v) const {
    const auto& node = nodes_.at(static_cast<std::size_t>(v.id()));
    if (!node.value) fail(ErrorCode::invalid_argument, "node #" + std::to_string(v.id()) + " has not been evaluated");
    return *node.value;
}

namespace {

[[noreturn]] void shape_error(int id, OpKind op, const std::string& detail) {
    fail(ErrorCode::shape_mismatch,
         "node #" + std::to_string(id) + " (" + op_name(op) + "): " + detail);
}

void require_same(int id, OpKind op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error(id, op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank2(int id, OpKind op, const Tensor& a) {
    if (a.rank() != 2) shape_error(id, op, "expected rank 2, got " + shape_str(a.shape()));
}

void require_axis(int id, OpKind op, const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.rank()) {
        shape_error(id, op, "axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    }
}

}  // namespace

void Graph::forward_node(Node& node, const Bindings& bindings) {
    const int id = static_cast<int>(&node - nodes_.data());
    auto in = [&](std::size_t i) -> const Tensor& { return *nodes_[static_cast<std::size_t>(node.inputs[i])].value; };

    switch (node.op) {
        case OpKind::constant:
            return;
        case OpKind::input: {
            const Tensor* bound = bindings.find(node.name);
            if (!bound) fail(ErrorCode::unbound_input, "input '" + node.name + "' is not bound");
            node.value = *bound;
            return;
        }
        case OpKind::matmul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            require_rank2(id, node.op, a);
            require_rank2(id, node.op, b);
            if (a.dim(1) != b.dim(0)) shape_error(id, node.op, shape_str(a.shape()) + " x " + shape_str(b.shape()));
            const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
            Tensor out({m, n});
            std::vector<double> acc(static_cast<std::size_t>(n));
            const float* pa = a.data().data();
            const float* pb = b.data().data();
            float* po = out.data().data();
            for (int i = 0; i < m; ++i) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int kk = 0; kk < k; ++kk) {
                    const double av = pa[static_cast<std::size_t>(i) * k + kk];
                    if (av == 0.0) continue;
                    const float* brow = pb + static_cast<std::size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * brow[j];
                }
                for (int j = 0; j < n; ++j) po[static_cast<std::size_t>(i) * n + j] = static_cast<float>(acc[static_cast<std::size_t>(j)]);
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::add:
        case OpKind::mul:
        case OpKind::minimum: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            require_same(id, node.op, a, b);
            Tensor out(a.shape());
            auto o = out.data();
            auto x = a.data();
            auto y = b.data();
            if (node.op == OpKind::add) {
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
            } else if (node.op == OpKind::mul) {
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
            } else {
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::min(x[i], y[i]);
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::scale: {
            Tensor out = in(0);
            for (float& v : out.data()) v *= node.scalar;
            node.value = std::move(out);
            return;
        }
        case OpKind::concat: {
            const Tensor& first = in(0);
            require_axis(id, node.op, first, node.axis);
            Shape shape = first.shape();
            int total = 0;
            for (std::size_t p = 0; p < node.inputs.size(); ++p) {
                const Tensor& t = in(p);
                if (t.rank() != first.rank()) shape_error(id, node.op, shape_str(first.shape()) + " vs " + shape_str(t.shape()));
                for (int ax = 0; ax < t.rank(); ++ax) {
                    if (ax != node.axis && t.dim(ax) != first.dim(ax)) {
                        shape_error(id, node.op, shape_str(first.shape()) + " vs " + shape_str(t.shape()));
                    }
                }
                total += t.dim(node.axis);
            }
            shape[static_cast<std::size_t>(node.axis)] = total;
            Tensor out(shape);
            const AxisView ov = axis_view(shape, node.axis);
            std::size_t offset = 0;
            for (std::size_t p = 0; p < node.inputs.size(); ++p) {
                const Tensor& t = in(p);
                const AxisView tv = axis_view(t.shape(), node.axis);
                for (std::size_t o = 0; o < tv.outer; ++o) {
                    const float* src = t.data().data() + o * tv.len * tv.inner;
                    float* dst = out.data().data() + (o * ov.len + offset) * ov.inner;
                    std::copy(src, src + tv.len * tv.inner, dst);
                }
                offset += tv.len;
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::sum:
        case OpKind::mean: {
            const Tensor& a = in(0);
            if (node.axis < 0) {
                double s = 0.0;
                for (float v : a.data()) s += v;
                if (node.op == OpKind::mean) s /= static_cast<double>(a.size());
                node.value = Tensor(ones_like(a.shape()), static_cast<float>(s));
                return;
            }
            require_axis(id, node.op, a, node.axis);
            Shape shape = a.shape();
            shape[static_cast<std::size_t>(node.axis)] = 1;
            Tensor out(shape);
            const AxisView v = axis_view(a.shape(), node.axis);
            const double div = node.op == OpKind::mean ? static_cast<double>(v.len) : 1.0;
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t i = 0; i < v.inner; ++i) {
                    double s = 0.0;
                    for (std::size_t l = 0; l < v.len; ++l) s += a[(o * v.len + l) * v.inner + i];
                    out[o * v.inner + i] = static_cast<float>(s / div);
                }
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::sigmoid:
        case OpKind::tanh:
        case OpKind::relu: {
            Tensor out = in(0);
            if (node.op == OpKind::sigmoid) {
                for (float& v : out.data()) v = stable_sigmoid(v);
            } else if (node.op == OpKind::tanh) {
                for (float& v : out.data()) v = std::tanh(v);
            } else {
                for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::softmax: {
            const Tensor& a = in(0);
            require_axis(id, node.op, a, node.axis);
            Tensor out(a.shape());
            const AxisView v = axis_view(a.shape(), node.axis);
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t i = 0; i < v.inner; ++i) {
                    auto idx = [&](std::size_t l) { return (o * v.len + l) * v.inner + i; };
                    float mx = a[idx(0)];
                    for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, a[idx(l)]);
                    double s = 0.0;
                    for (std::size_t l = 0; l < v.len; ++l) {
                        const double e = std::exp(static_cast<double>(a[idx(l)]) - mx);
                        out[idx(l)] = static_cast<float>(e);
                        s += e;
                    }
                    for (std::size_t l = 0; l < v.len; ++l) out[idx(l)] = static_cast<float>(out[idx(l)] / s);
                }
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::l2_normalize: {
            const Tensor& a = in(0);
            require_axis(id, node.op, a, node.axis);
            Tensor out(a.shape());
            const AxisView v = axis_view(a.shape(), node.axis);
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t i = 0; i < v.inner; ++i) {
                    auto idx = [&](std::size_t l) { return (o * v.len + l) * v.inner + i; };
                    double ss = 0.0;
                    for (std::size_t l = 0; l < v.len; ++l) ss += static_cast<double>(a[idx(l)]) * a[idx(l)];
                    const double d = std::sqrt(ss) + kNormGuard;
                    for (std::size_t l = 0; l < v.len; ++l) out[idx(l)] = static_cast<float>(a[idx(l)] / d);
                }
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::renormalize: {
            const Tensor& x = in(0);
            const Tensor& fb = in(1);
            require_same(id, node.op, x, fb);
            double s = 0.0;
            for (float v : x.data()) s += v;
            if (s < node.scalar) {
                node.fallback_taken = true;
                node.value = fb;
                return;
            }
            node.fallback_taken = false;
            Tensor out(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] / s);
            node.value = std::move(out);
            return;
        }
        case OpKind::bce_loss: {
            const Tensor& p = in(0);
            const Tensor& t = in(1);
            require_same(id, node.op, p, t);
            double s = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double q = std::clamp(p[i], kProbClamp, 1.0f - kProbClamp);
                s -= t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q);
            }
            node.value = Tensor(ones_like(p.shape()), static_cast<float>(s / static_cast<double>(p.size())));
            return;
        }
        case OpKind::ce_loss: {
            const Tensor& p = in(0);
            const Tensor& t = in(1);
            require_same(id, node.op, p, t);
            require_rank2(id, node.op, p);
            double s = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (t[i] != 0.0f) s -= t[i] * std::log(std::max(static_cast<double>(p[i]), 1e-30));
            }
            node.value = Tensor(ones_like(p.shape()), static_cast<float>(s / p.dim(0)));
            return;
        }
        case OpKind::slice: {
            const Tensor& a = in(0);
            require_axis(id, node.op, a, node.axis);
            if (node.begin < 0 || node.end > a.dim(node.axis) || node.begin >= node.end) {
                shape_error(id, node.op, "range [" + std::to_string(node.begin) + "," + std::to_string(node.end) +
                                             ") invalid for " + shape_str(a.shape()));
            }
            Shape shape = a.shape();
            shape[static_cast<std::size_t>(node.axis)] = node.end - node.begin;
            Tensor out(shape);
            const AxisView av = axis_view(a.shape(), node.axis);
            const std::size_t w = static_cast<std::size_t>(node.end - node.begin) * av.inner;
            for (std::size_t o = 0; o < av.outer; ++o) {
                const float* src = a.data().data() + (o * av.len + static_cast<std::size_t>(node.begin)) * av.inner;
                std::copy(src, src + w, out.data().data() + o * w);
            }
            node.value = std::move(out);
            return;
        }
        case OpKind::transpose: {
            const Tensor& a = in(0);
            require_rank2(id, node.op, a);
            const int r = a.dim(0), c = a.dim(1);
            Tensor out({c, r});
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
            node.value = std::move(out);
            return;
        }
        case OpKind::broadcast: {
            const Tensor& a = in(0);
            if (a.dim(0) != 1) shape_error(id, node.op, "leading axis must be 1, got " + shape_str(a.shape()));
            Shape shape = a.shape();
            shape[0] = node.begin;
            Tensor out(shape);
            for (int r = 0; r < node.begin; ++r) {
                std::copy(a.data().begin(), a.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * a.size()));
            }
            node.value = std::move(out);
            return;
        }
    }
}

const Tensor& Graph::evaluate(Var out, const Bindings& bindings) {
    if (out.graph() != this) fail(ErrorCode::invalid_argument, "evaluate: node from a different graph");
    for (int i = 0; i <= out.id(); ++i) forward_node(nodes_[static_cast<std::size_t>(i)], bindings);
    evaluated_upto_ = out.id();
    return *nodes_[static_cast<std::size_t>(out.id())].value;
}

namespace {

void add_into(std::optional<Tensor>& slot, const Tensor& g) {
    if (!slot) {
        slot = g;
        return;
    }
    auto d = slot->data();
    auto s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// C += A^T-free products, all accumulated in double.
// dA = G * B^T
Tensor matmul_grad_a(const Tensor& g, const Tensor& b) {
    const int m = g.dim(0), n = g.dim(1), k = b.dim(0);
    Tensor out({m, k});
    for (int i = 0; i < m; ++i) {
        const float* grow = g.data().data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const float* brow = b.data().data() + static_cast<std::size_t>(kk) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += static_cast<double>(grow[j]) * brow[j];
            out.at(i, kk) = static_cast<float>(s);
        }
    }
    return out;
}

// dB = A^T * G
Tensor matmul_grad_b(const Tensor& a, const Tensor& g) {
    const int m = a.dim(0), k = a.dim(1), n = g.dim(1);
    std::vector<double> acc(static_cast<std::size_t>(k) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const float* grow = g.data().data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = a.at(i, kk);
            if (av == 0.0) continue;
            double* arow = acc.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) arow[j] += av * grow[j];
        }
    }
    Tensor out({k, n});
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

}  // namespace

Gradients Graph::backward(Var out, const Bindings& bindings, const std::optional<Tensor>& seed) {
    if (out.graph() != this) fail(ErrorCode::invalid_argument, "backward: node from a different graph");
    if (evaluated_upto_ < out.id()) evaluate(out, bindings);
    const Tensor& result = *nodes_[static_cast<std::size_t>(out.id())].value;

    std::vector<std::optional<Tensor>> grads(static_cast<std::size_t>(out.id()) + 1);
    if (seed) {
        if (seed->shape() != result.shape()) {
            fail(ErrorCode::shape_mismatch, "seed gradient " + shape_str(seed->shape()) + " vs output " + shape_str(result.shape()));
        }
        grads.back() = *seed;
    } else {
        if (result.size() != 1) {
            fail(ErrorCode::non_scalar_loss, "backward on output of shape " + shape_str(result.shape()) + " needs a seed gradient");
        }
        grads.back() = Tensor(result.shape(), 1.0f);
    }

    for (int id = out.id(); id >= 0; --id) {
        auto& slot = grads[static_cast<std::size_t>(id)];
        if (!slot) continue;
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        const Tensor& g = *slot;
        const Tensor& y = *node.value;
        auto in = [&](std::size_t i) -> const Tensor& { return *nodes_[static_cast<std::size_t>(node.inputs[i])].value; };
        auto push = [&](std::size_t i, const Tensor& gi) { add_into(grads[static_cast<std::size_t>(node.inputs[i])], gi); };

        switch (node.op) {
            case OpKind::input:
            case OpKind::constant:
                break;
            case OpKind::matmul:
                push(0, matmul_grad_a(g, in(1)));
                push(1, matmul_grad_b(in(0), g));
                break;
            case OpKind::add:
                push(0, g);
                push(1, g);
                break;
            case OpKind::mul: {
                Tensor ga(g.shape()), gb(g.shape());
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] = g[i] * b[i];
                    gb[i] = g[i] * a[i];
                }
                push(0, ga);
                push(1, gb);
                break;
            }
            case OpKind::scale: {
                Tensor ga = g;
                for (float& v : ga.data()) v *= node.scalar;
                push(0, ga);
                break;
            }
            case OpKind::minimum: {
                Tensor ga(g.shape()), gb(g.shape());
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (a[i] <= b[i]) {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                push(0, ga);
                push(1, gb);
                break;
            }
            case OpKind::concat: {
                const AxisView ov = axis_view(y.shape(), node.axis);
                std::size_t offset = 0;
                for (std::size_t p = 0; p < node.inputs.size(); ++p) {
                    const Tensor& t = in(p);
                    const AxisView tv = axis_view(t.shape(), node.axis);
                    Tensor gp(t.shape());
                    for (std::size_t o = 0; o < tv.outer; ++o) {
                        const float* src = g.data().data() + (o * ov.len + offset) * ov.inner;
                        std::copy(src, src + tv.len * tv.inner, gp.data().data() + o * tv.len * tv.inner);
                    }
                    offset += tv.len;
                    push(p, gp);
                }
                break;
            }
            case OpKind::sum:
            case OpKind::mean: {
                const Tensor& a = in(0);
                Tensor ga(a.shape());
                if (node.axis < 0) {
                    const float v = node.op == OpKind::mean ? g[0] / static_cast<float>(a.size()) : g[0];
                    std::fill(ga.data().begin(), ga.data().end(), v);
                } else {
                    const AxisView v = axis_view(a.shape(), node.axis);
                    const float div = node.op == OpKind::mean ? static_cast<float>(v.len) : 1.0f;
                    for (std::size_t o = 0; o < v.outer; ++o)
                        for (std::size_t l = 0; l < v.len; ++l)
                            for (std::size_t i = 0; i < v.inner; ++i)
                                ga[(o * v.len + l) * v.inner + i] = g[o * v.inner + i] / div;
                }
                push(0, ga);
                break;
            }
            case OpKind::sigmoid: {
                Tensor ga(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] = g[i] * y[i] * (1.0f - y[i]) * sigmoid_grad_factor_;
                }
                push(0, ga);
                break;
            }
            case OpKind::tanh: {
                Tensor ga(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0f - y[i] * y[i]);
                push(0, ga);
                break;
            }
            case OpKind::relu: {
                Tensor ga(g.shape());
                const Tensor& a = in(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = a[i] > 0.0f ? g[i] : 0.0f;
                push(0, ga);
                break;
            }
            case OpKind::softmax: {
                Tensor ga(g.shape());
                const AxisView v = axis_view(y.shape(), node.axis);
                for (std::size_t o = 0; o < v.outer; ++o) {
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        auto idx = [&](std::size_t l) { return (o * v.len + l) * v.inner + i; };
                        double dot = 0.0;
                        for (std::size_t l = 0; l < v.len; ++l) dot += static_cast<double>(g[idx(l)]) * y[idx(l)];
                        for (std::size_t l = 0; l < v.len; ++l) {
                            ga[idx(l)] = static_cast<float>(y[idx(l)] * (g[idx(l)] - dot));
                        }
                    }
                }
                push(0, ga);
                break;
            }
            case OpKind::l2_normalize: {
                const Tensor& a = in(0);
                Tensor ga(g.shape());
                const AxisView v = axis_view(a.shape(), node.axis);
                for (std::size_t o = 0; o < v.outer; ++o) {
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        auto idx = [&](std::size_t l) { return (o * v.len + l) * v.inner + i; };
                        double ss = 0.0;
                        double xg = 0.0;
                        for (std::size_t l = 0; l < v.len; ++l) {
                            ss += static_cast<double>(a[idx(l)]) * a[idx(l)];
                            xg += static_cast<double>(a[idx(l)]) * g[idx(l)];
                        }
                        const double n = std::sqrt(ss);
                        const double d = n + kNormGuard;
                        const double coef = n > 0.0 ? xg / (d * d * n) : 0.0;
                        for (std::size_t l = 0; l < v.len; ++l) {
                            ga[idx(l)] = static_cast<float>(g[idx(l)] / d - a[idx(l)] * coef);
                        }
                    }
                }
                push(0, ga);
                break;
            }
            case OpKind::renormalize: {
                if (node.fallback_taken) {
                    push(1, g);
                    break;
                }
                const Tensor& x = in(0);
                double s = 0.0;
                double gx = 0.0;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    s += x[i];
                    gx += static_cast<double>(g[i]) * x[i];
                }
                Tensor ga(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) ga[i] = static_cast<float>(g[i] / s - gx / (s * s));
                push(0, ga);
                break;
            }
            case OpKind::bce_loss: {
                const Tensor& p = in(0);
                const Tensor& t = in(1);
                const double scale_factor = g[0] / static_cast<double>(p.size());
                Tensor gp(p.shape()), gt(p.shape());
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const bool clamped = p[i] < kProbClamp || p[i] > 1.0f - kProbClamp;
                    const double q = std::clamp(p[i], kProbClamp, 1.0f - kProbClamp);
                    gp[i] = clamped ? 0.0f : static_cast<float>(scale_factor * (-t[i] / q + (1.0 - t[i]) / (1.0 - q)));
                    gt[i] = static_cast<float>(scale_factor * (std::log(1.0 - q) - std::log(q)));
                }
                push(0, gp);
                push(1, gt);
                break;
            }
            case OpKind::ce_loss: {
                const Tensor& p = in(0);
                const Tensor& t = in(1);
                const double scale_factor = g[0] / static_cast<double>(p.dim(0));
                Tensor gp(p.shape()), gt(p.shape());
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const double q = std::max(static_cast<double>(p[i]), 1e-30);
                    gp[i] = t[i] != 0.0f ? static_cast<float>(-scale_factor * t[i] / q) : 0.0f;
                    gt[i] = static_cast<float>(-scale_factor * std::log(q));
                }
                push(0, gp);
                push(1, gt);
                break;
            }
            case OpKind::slice: {
                const Tensor& a = in(0);
                Tensor ga(a.shape());
                const AxisView av = axis_view(a.shape(), node.axis);
                const std::size_t w = static_cast<std::size_t>(node.end - node.begin) * av.inner;
                for (std::size_t o = 0; o < av.outer; ++o) {
                    std::copy(g.data().data() + o * w, g.data().data() + (o + 1) * w,
                              ga.data().data() + (o * av.len + static_cast<std::size_t>(node.begin)) * av.inner);
                }
                push(0, ga);
                break;
            }
            case OpKind::transpose: {
                Tensor ga({g.dim(1), g.dim(0)});
                for (int i = 0; i < g.dim(0); ++i)
                    for (int j = 0; j < g.dim(1); ++j) ga.at(j, i) = g.at(i, j);
                push(0, ga);
                break;
            }
            case OpKind::broadcast: {
                const Tensor& a = in(0);
                Tensor ga(a.shape());
                for (int r = 0; r < node.begin; ++r)
                    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[static_cast<std::size_t>(r) * a.size() + i];
                push(0, ga);
                break;
            }
        }
        if (node.op != OpKind::input) slot.reset();
    }

    Gradients result_grads;
    for (const auto& [name, tensor] : bindings.entries()) result_grads.emplace(name, Tensor(tensor->shape()));
    for (int id = 0; id <= out.id(); ++id) {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.op != OpKind::input || !grads[static_cast<std::size_t>(id)]) continue;
        auto it = result_grads.find(node.name);
        if (it == result_grads.end()) continue;
        auto d = it->second.data();
        auto s = grads[static_cast<std::size_t>(id)]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
    return result_grads;
}

// ---------------------------------------------------------------- op constructors

Var matmul(Var a, Var b) { return make_node(OpKind::matmul, {a, b}, 0, 0, 0, 0.0f); }
Var add(Var a, Var b) { return make_node(OpKind::add, {a, b}, 0, 0, 0, 0.0f); }
Var mul(Var a, Var b) { return make_node(OpKind::mul, {a, b}, 0, 0, 0, 0.0f); }
Var scale(Var a, float factor) { return make_node(OpKind::scale, {a}, 0, 0, 0, factor); }
Var minimum(Var a, Var b) { return make_node(OpKind::minimum, {a, b}, 0, 0, 0, 0.0f); }
Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) fail(ErrorCode::invalid_argument, "concat of zero inputs");
    return make_node(OpKind::concat, parts, axis, 0, 0, 0.0f);
}
Var sum(Var a, int axis) { return make_node(OpKind::sum, {a}, axis, 0, 0, 0.0f); }
Var sum(Var a) { return make_node(OpKind::sum, {a}, -1, 0, 0, 0.0f); }
Var mean(Var a, int axis) { return make_node(OpKind::mean, {a}, axis, 0, 0, 0.0f); }
Var mean(Var a) { return make_node(OpKind::mean, {a}, -1, 0, 0, 0.0f); }
Var sigmoid(Var a) { return make_node(OpKind::sigmoid, {a}, 0, 0, 0, 0.0f); }
Var tanh(Var a) { return make_node(OpKind::tanh, {a}, 0, 0, 0, 0.0f); }
Var relu(Var a) { return make_node(OpKind::relu, {a}, 0, 0, 0, 0.0f); }
Var softmax(Var a, int axis) { return make_node(OpKind::softmax, {a}, axis, 0, 0, 0.0f); }
Var l2_normalize(Var a, int axis) { return make_node(OpKind::l2_normalize, {a}, axis, 0, 0, 0.0f); }
Var renormalize(Var x, Var fallback, float threshold) {
    return make_node(OpKind::renormalize, {x, fallback}, 0, 0, 0, threshold);
}
Var bce_loss(Var prob, Var target) { return make_node(OpKind::bce_loss, {prob, target}, 0, 0, 0, 0.0f); }
Var ce_loss(Var prob, Var target) { return make_node(OpKind::ce_loss, {prob, target}, 0, 0, 0, 0.0f); }
Var slice(Var a, int axis, int begin, int end) { return make_node(OpKind::slice, {a}, axis, begin, end, 0.0f); }
Var transpose(Var a) { return make_node(OpKind::transpose, {a}, 0, 0, 0, 0.0f); }
Var broadcast(Var a, int rows) {
    if (rows <= 0) fail(ErrorCode::invalid_argument, "broadcast to non-positive extent");
    return make_node(OpKind::broadcast, {a}, 0, rows, 0, 0.0f);
}

// ---------------------------------------------------------------- grad check

std::vector<std::uint8_t> Graph::branch_signature() const {
    std::vector<std::uint8_t> sig;
    for (int id = 0; id <= evaluated_upto_; ++id) {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        auto in = [&](int k) -> const Tensor& { return *nodes_[static_cast<std::size_t>(node.inputs[k])].value; };
        switch (node.op) {
            case OpKind::relu:
                for (float v : in(0).data()) sig.push_back(v > 0.0f);
                break;
            case OpKind::minimum: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                for (std::size_t i = 0; i < a.size(); ++i) sig.push_back(a[i] <= b[i]);
                break;
            }
            case OpKind::renormalize:
                sig.push_back(node.fallback_taken);
                break;
            case OpKind::bce_loss:
                for (float p : in(0).data()) sig.push_back(p < kProbClamp ? 0 : p > 1.0f - kProbClamp ? 2 : 1);
                break;
            default:
                break;
        }
    }
    return sig;
}

GradCheckReport grad_check(Graph& graph, Var loss, const Bindings& bindings, const GradCheckOptions& options) {
    GradCheckReport report;
    if (graph.evaluate(loss, bindings).size() != 1) {
        fail(ErrorCode::non_scalar_loss, "grad_check requires a scalar loss");
    }
    const Gradients analytic = graph.backward(loss, bindings);
    Rng rng(options.seed);

    for (const auto& [name, tensor] : bindings.entries()) {
        if (!options.only.empty() &&
            std::find(options.only.begin(), options.only.end(), name) == options.only.end()) {
            continue;
        }
        GradCheckEntry entry;
        entry.name = name;
        std::vector<std::size_t> coords(tensor->size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords > 0 && coords.size() > options.max_coords) {
            rng.shuffle(coords);
            coords.resize(options.max_coords);
        }
        Bindings perturbed = bindings;
        Tensor work = *tensor;
        perturbed.bind(name, work);
        const Tensor& grad = analytic.at(name);
        for (std::size_t c : coords) {
            const float orig = work[c];
            work[c] = orig + options.step;
            const double up = graph.evaluate(loss, perturbed).item();
            const auto up_branches = graph.branch_signature();
            work[c] = orig - options.step;
            const double down = graph.evaluate(loss, perturbed).item();
            work[c] = orig;
            if (graph.branch_signature() != up_branches) {
                ++entry.skipped_kinks;
                continue;
            }
            // Use the realized step to cancel float rounding of orig +/- step.
            const double h = static_cast<double>(orig + options.step) - static_cast<double>(orig - options.step);
            const double numeric = (up - down) / h;
            const double a = grad[c];
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            entry.max_rel_error = std::max(entry.max_rel_error, err);
            ++entry.checked;
        }
        entry.passed = entry.max_rel_error <= options.tolerance;
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.skipped_kinks += entry.skipped_kinks;
        report.passed = report.passed && entry.passed;
        report.entries.push_back(std::move(entry));
    }
    // Leave node values consistent with the unperturbed bindings.
    graph.evaluate(loss, bindings);
    return report;
}

// ---------------------------------------------------------------- parameters

void ParameterStore::add(const std::string& name, Tensor value) {
    if (params_.count(name)) fail(ErrorCode::duplicate_name, "parameter '" + name + "' already exists");
    m_.emplace(name, Tensor(value.shape()));
    v_.emplace(name, Tensor(value.shape()));
    params_.emplace(name, std::move(value));
}

bool ParameterStore::contains(const std::string& name) const { return params_.count(name) != 0; }

Tensor& ParameterStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorCode::invalid_argument, "unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorCode::invalid_argument, "unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    for (const auto& kv : params_) out.push_back(kv.first);
    return out;
}

Bindings ParameterStore::bindings() const {
    Bindings b;
    for (const auto& [name, t] : params_) b.bind(name, t);
    return b;
}

Gradients ParameterStore::zero_gradients() const {
    Gradients g;
    for (const auto& [name, t] : params_) g.emplace(name, Tensor(t.shape()));
    return g;
}

void ParameterStore::adam_step(const Gradients& gradients, const AdamConfig& config) {
    for (const auto& [name, g] : gradients) {
        auto it = params_.find(name);
        if (it == params_.end()) fail(ErrorCode::invalid_argument, "gradient for unknown parameter '" + name + "'");
        if (it->second.shape() != g.shape()) {
            fail(ErrorCode::shape_mismatch, "gradient for '" + name + "' has shape " + shape_str(g.shape()) +
                                                ", parameter has " + shape_str(it->second.shape()));
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(config.beta1), static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(config.beta2), static_cast<double>(step_));
    for (const auto& [name, g] : gradients) {
        Tensor& w = params_.at(name);
        Tensor& m = m_.at(name);
        Tensor& v = v_.at(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0f - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0f - config.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            w[i] = static_cast<float>(w[i] - config.lr * mh / (std::sqrt(vh) + config.eps));
        }
    }
}

ParameterStore init_parameters(const std::map<std::string, Shape>& spec, std::uint64_t seed) {
    ParameterStore store;
    Rng rng(seed);
    for (const auto& [name, shape] : spec) {
        Tensor t(shape);
        const double fan_out = shape[0];
        const double fan_in = static_cast<double>(t.size()) / fan_out;
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (float& v : t.data()) v = static_cast<float>(rng.uniform(-a, a));
        store.add(name, std::move(t));
    }
    return store;
}

void accumulate(Gradients& dst, const Gradients& src) {
    for (const auto& [name, g] : src) {
        auto it = dst.find(name);
        if (it == dst.end()) {
            dst.emplace(name, g);
            continue;
        }
        auto d = it->second.data();
        auto s = g.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
}

void scale_gradients(Gradients& grads, float factor) {
    for (auto& [name, g] : grads)
        for (float& v : g.data()) v *= factor;
}

}  // namespace poem::tensor
