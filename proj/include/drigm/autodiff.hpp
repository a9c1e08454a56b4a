#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace drigm::ad {

/// Dense row-major matrix of doubles. Vectors are 1xN or Nx1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {}

    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

/// Named parameter tensors with deep-copy snapshots for target networks.
class ParamStore {
public:
    Tensor& create(const std::string& name, Tensor init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    std::vector<std::string> names() const;
    std::size_t total_entries() const;

    /// Deep copy; mutating the original never touches the snapshot.
    ParamStore snapshot() const { return *this; }
    /// Overwrites this store's tensors with those of `other` (same names).
    void assign_from(const ParamStore& other);

    std::string to_json() const;
    static ParamStore from_json(const std::string& text);
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

private:
    std::map<std::string, Tensor> params_;
};

/// Handle to a node on a Tape.
struct Value {
    int id = -1;
};

/// Reverse-mode tape over 2-D tensors.
///
/// A tape is built fresh for every forward pass (dynamic graph); parameters
/// enter as named leaves and their gradients are collected per name after
/// backward(). Every op validates shapes and finiteness of its output and
/// reports the offending node id on failure.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept;
    Tape& operator=(Tape&&) noexcept;

    Value input(Tensor t);                                     // constant leaf
    Value param(const ParamStore& store, const std::string& name);  // differentiable leaf

    Value matmul(Value a, Value b);
    /// Elementwise; b may also be a broadcast row (1 x n) or scalar (1 x 1).
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double c);
    Value add_const(Value a, double c);

    Value relu(Value a);  // also serves as the positive part [x]_+
    Value elu(Value a);
    Value abs(Value a);
    Value softplus(Value a);
    Value sigmoid(Value a);
    Value square(Value a);

    Value select_cols(Value a, const std::vector<int>& col_per_row);  // (m,n) -> (m,1)
    Value concat_cols(const std::vector<Value>& parts);               // k x (m,1) -> (m,k)
    Value concat_rows(const std::vector<Value>& parts);
    Value slice_row(Value a, int row);  // (m,n) -> (1,n)
    Value reshape(Value a, int rows, int cols);

    Value sum_cols(Value a);  // (m,n) -> (m,1) row sums
    Value max_cols(Value a);  // (m,n) -> (m,1) row max, grads flow to the first argmax
    Value sum_all(Value a);   // -> (1,1)
    Value mean_all(Value a);  // -> (1,1)

    /// Identity value, zero gradient (detached targets).
    Value stop_gradient(Value a);

    /// Accumulates gradients of a scalar root into every node.
    void backward(Value root);

    const Tensor& value(Value v) const;
    const Tensor& gradient(Value v) const;
    /// Gradients of all named parameter leaves, summed per name.
    std::map<std::string, Tensor> param_grads() const;

    int node_count() const;

private:
    struct Node;
    int push(Node n, const char* op);
    Value unary(Value a, const char* op, const std::function<double(double)>& f,
                const std::function<double(double, double)>& df);

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

/// Optimizers with per-parameter moment buffers keyed by name.
class Optimizer {
public:
    struct RmsProp {
        double lr = 5e-4;
        double decay = 0.99;
        double eps = 1e-8;
    };
    struct Adam {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    static Optimizer rmsprop();
    static Optimizer rmsprop(RmsProp cfg);
    static Optimizer adam();
    static Optimizer adam(Adam cfg);

    void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

private:
    enum class Kind { RmsProp, Adam } kind_ = Kind::RmsProp;
    RmsProp rms_{};
    Adam adam_{};
    long t_ = 0;
    std::map<std::string, Tensor> m1_, m2_;
};

struct GradCheckReport {
    bool ok = true;
    double max_rel_error = 0.0;
    std::string worst_param;
};

/// Central-difference check of analytic gradients.
///
/// `f(params, grads)` returns the loss; when `grads` is non-null it must be
/// filled with the analytic gradients. Every parameter entry is perturbed by
/// +-h. Relative error uses max(1, |analytic|, |numeric|) as denominator.
GradCheckReport grad_check(ParamStore& params,
                           const std::function<double(ParamStore&,
                                                      std::map<std::string, Tensor>*)>& f,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace drigm::ad
