#pragma once

// Dense float32 tensors, a define-by-run expression graph with reverse-mode
// differentiation, finite-difference gradient checking, parameter storage
// and the Adam optimizer.

#include <cstdint>
#include <deque>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace poem::tensor {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor matrix(int rows, int cols, std::vector<float> data);
    static Tensor row(std::vector<float> data);
    static Tensor scalar(float value);

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }
    // Rank-2 element access.
    float& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    float at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    float item() const;
    bool all_finite() const noexcept;

    // Bitwise equality of shape and payload.
    friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

private:
    Shape shape_;
    std::vector<float> data_;
};

enum class OpKind {
    input,
    constant,
    matmul,
    add,
    mul,
    scale,
    minimum,
    concat,
    sum,
    mean,
    sigmoid,
    tanh,
    relu,
    softmax,
    l2_normalize,
    renormalize,
    bce_loss,
    ce_loss,
    slice,
    transpose,
    broadcast,
};

const char* op_name(OpKind op);

// Name -> tensor map used to bind graph inputs. Entries either reference
// caller-owned tensors or own a copy.
class Bindings {
public:
    Bindings() = default;
    Bindings(std::initializer_list<std::pair<const std::string, Tensor>> init);
    Bindings(const Bindings& other);
    Bindings& operator=(const Bindings& other);
    Bindings(Bindings&&) noexcept = default;
    Bindings& operator=(Bindings&&) noexcept = default;

    void bind(const std::string& name, const Tensor& ref);
    void set(const std::string& name, Tensor value);
    const Tensor* find(const std::string& name) const;
    const std::map<std::string, const Tensor*>& entries() const noexcept { return refs_; }

private:
    std::map<std::string, const Tensor*> refs_;
    std::deque<Tensor> owned_;
};

using Gradients = std::map<std::string, Tensor>;

class Graph;

// Handle to a node of a Graph; cheap to copy.
class Var {
public:
    Var() = default;
    Var(Graph* graph, int id) : graph_(graph), id_(id) {}
    Graph* graph() const noexcept { return graph_; }
    int id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

private:
    Graph* graph_ = nullptr;
    int id_ = -1;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(const std::string& name);
    Var constant(Tensor value);

    // Forward pass over every node up to and including `out`.
    const Tensor& evaluate(Var out, const Bindings& bindings);

    // Gradients of `out` with respect to every bound tensor. A scalar output
    // is seeded with 1 when `seed` is empty.
    Gradients backward(Var out, const Bindings& bindings,
                       const std::optional<Tensor>& seed = std::nullopt);

    const Tensor& value(Var v) const;
    std::size_t node_count() const noexcept { return nodes_.size(); }

    // Which side of every non-differentiable point (relu, minimum,
    // renormalize fallback, probability clamps) the last evaluation took.
    std::vector<std::uint8_t> branch_signature() const;

    // Test hook: scales the sigmoid backward rule, used as a negative control
    // for gradient checking.
    void corrupt_sigmoid_gradient(float factor) { sigmoid_grad_factor_ = factor; }

private:
    friend Var make_node(OpKind, std::vector<Var>, int, int, int, float);

    struct Node {
        OpKind op = OpKind::constant;
        std::vector<int> inputs;
        int axis = 0;
        int begin = 0;
        int end = 0;
        float scalar = 0.0f;
        std::string name;
        std::optional<Tensor> value;
        bool fallback_taken = false;
    };

    Var add_node(Node node);
    void forward_node(Node& node, const Bindings& bindings);

    std::vector<Node> nodes_;
    int evaluated_upto_ = -1;
    float sigmoid_grad_factor_ = 1.0f;
};

// Op constructors. Shape rules are checked at evaluation time; no implicit
// broadcasting beyond `broadcast`.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float factor);
Var minimum(Var a, Var b);
Var concat(const std::vector<Var>& parts, int axis);
Var sum(Var a, int axis);
Var sum(Var a);
Var mean(Var a, int axis);
Var mean(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softmax(Var a, int axis);
Var l2_normalize(Var a, int axis);
// x / sum(x) over all elements; yields `fallback` when sum(x) < threshold.
Var renormalize(Var x, Var fallback, float threshold);
Var bce_loss(Var prob, Var target);
Var ce_loss(Var prob, Var target);
Var slice(Var a, int axis, int begin, int end);
Var transpose(Var a);
// Expands a leading axis of extent 1 to `rows`.
Var broadcast(Var a, int rows);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

constexpr float kNormGuard = 1e-12f;
constexpr float kProbClamp = 1e-7f;

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Coordinates whose +/- step evaluations straddle a kink.
    std::size_t skipped_kinks = 0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    std::size_t skipped_kinks = 0;
    bool passed = true;
};

struct GradCheckOptions {
    double tolerance = 1e-3;
    float step = 1e-3f;
    // Coordinates per parameter; 0 checks all.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
    // Restrict to these names; empty checks every binding.
    std::vector<std::string> only;
};

// Compares analytic gradients with central differences. The relative error
// of one coordinate is |a - n| / max(1, |a|, |n|). Coordinates where the two
// evaluations take different branches of a kinked op are skipped and counted.
GradCheckReport grad_check(Graph& graph, Var loss, const Bindings& bindings,
                           const GradCheckOptions& options = {});

struct AdamConfig {
    float lr = 4e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class ParameterStore {
public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    const std::map<std::string, Tensor>& parameters() const noexcept { return params_; }
    std::vector<std::string> names() const;

    Bindings bindings() const;
    Gradients zero_gradients() const;

    std::int64_t step() const noexcept { return step_; }
    void adam_step(const Gradients& gradients, const AdamConfig& config);

    // Optimizer state, exposed for persistence.
    const std::map<std::string, Tensor>& first_moments() const noexcept { return m_; }
    const std::map<std::string, Tensor>& second_moments() const noexcept { return v_; }

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    std::int64_t step_ = 0;
};

inline void adam_step(ParameterStore& store, const Gradients& gradients, const AdamConfig& config) {
    store.adam_step(gradients, config);
}

// Uniform Glorot initialization: U(-a, a), a = sqrt(6 / (fan_in + fan_out)),
// fan_out = shape[0], fan_in = product of the remaining axes.
ParameterStore init_parameters(const std::map<std::string, Shape>& spec, std::uint64_t seed);

// Accumulates `src` into `dst` (same keys).
void accumulate(Gradients& dst, const Gradients& src);
void scale_gradients(Gradients& grads, float factor);

}  // namespace poem::tensor
