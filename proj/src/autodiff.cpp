#include "drigm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace drigm::ad {

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::create(const std::string& name, Tensor init) {
    auto [it, inserted] = params_.emplace(name, std::move(init));
    if (!inserted) throw std::invalid_argument("parameter already exists: " + name);
    return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

std::size_t ParamStore::total_entries() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.size();
    return n;
}

void ParamStore::assign_from(const ParamStore& other) {
    for (auto& [k, v] : params_) v = other.get(k);
}

std::string ParamStore::to_json() const {
    nlohmann::json j;
    j["format"] = "drigm-params-v1";
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : params_) {
        tensors[name] = {{"shape", {t.rows, t.cols}}, {"data", t.data}};
    }
    j["tensors"] = std::move(tensors);
    return j.dump();
}

ParamStore ParamStore::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("format", "") != "drigm-params-v1")
        throw std::runtime_error("unsupported checkpoint format");
    ParamStore store;
    for (const auto& [name, entry] : j.at("tensors").items()) {
        const auto shape = entry.at("shape").get<std::vector<int>>();
        Tensor t(shape.at(0), shape.at(1), entry.at("data").get<std::vector<double>>());
        if (t.size() != static_cast<std::size_t>(t.rows) * t.cols)
            throw std::runtime_error("checkpoint tensor size mismatch for " + name);
        store.params_.emplace(name, std::move(t));
    }
    return store;
}

void ParamStore::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_json();
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Tape

struct Tape::Node {
    const char* op = "";
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    std::string param_name;  // nonempty for parameter leaves
    std::vector<int> inputs;
    // op-specific payloads
    std::vector<int> aux_idx;
    double aux_scalar = 0.0;
    std::function<void(Tape&, Node&)> backward_fn;
};

Tape::Tape() = default;
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

int Tape::push(Node n, const char* op) {
    n.op = op;
    for (double v : n.val.data) {
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite value produced by op '" << op << "' at node "
               << nodes_.size();
            throw std::runtime_error(os.str());
        }
    }
    for (int in : n.inputs)
        if (nodes_[in].needs_grad) n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Value Tape::input(Tensor t) {
    Node n;
    n.val = std::move(t);
    return {push(std::move(n), "input")};
}

Value Tape::param(const ParamStore& store, const std::string& name) {
    Node n;
    n.val = store.get(name);
    n.needs_grad = true;
    n.param_name = name;
    return {push(std::move(n), "param")};
}

namespace {

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Broadcast::Same;
    if (b.rows == 1 && b.cols == a.cols) return Broadcast::Row;
    if (b.rows == 1 && b.cols == 1) return Broadcast::Scalar;
    std::ostringstream os;
    os << "shape mismatch in op '" << op << "': (" << a.rows << "x" << a.cols << ") vs ("
       << b.rows << "x" << b.cols << ")";
    throw std::runtime_error(os.str());
}

double broadcast_at(const Tensor& b, Broadcast k, int r, int c) {
    switch (k) {
        case Broadcast::Same: return b.at(r, c);
        case Broadcast::Row: return b.at(0, c);
        default: return b.data[0];
    }
}

void broadcast_accum(Tensor& db, Broadcast k, int r, int c, double g) {
    switch (k) {
        case Broadcast::Same: db.at(r, c) += g; break;
        case Broadcast::Row: db.at(0, c) += g; break;
        default: db.data[0] += g; break;
    }
}

}  // namespace

Value Tape::matmul(Value a, Value b) {
    const Tensor& A = nodes_[a.id].val;
    const Tensor& B = nodes_[b.id].val;
    if (A.cols != B.rows) {
        std::ostringstream os;
        os << "shape mismatch in matmul: (" << A.rows << "x" << A.cols << ") @ (" << B.rows
           << "x" << B.cols << ")";
        throw std::runtime_error(os.str());
    }
    Node n;
    n.inputs = {a.id, b.id};
    n.val = Tensor(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        for (int k = 0; k < A.cols; ++k) {
            const double aik = A.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = &B.data[static_cast<std::size_t>(k) * B.cols];
            double* crow = &n.val.data[static_cast<std::size_t>(i) * B.cols];
            for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    n.backward_fn = [a, b](Tape& t, Node& self) {
        const Tensor& A = t.nodes_[a.id].val;
        const Tensor& B = t.nodes_[b.id].val;
        Tensor& dA = t.nodes_[a.id].grad;
        Tensor& dB = t.nodes_[b.id].grad;
        const Tensor& dC = self.grad;
        if (t.nodes_[a.id].needs_grad) {
            for (int i = 0; i < A.rows; ++i)
                for (int j = 0; j < B.cols; ++j) {
                    const double g = dC.at(i, j);
                    if (g == 0.0) continue;
                    for (int k = 0; k < A.cols; ++k) dA.at(i, k) += g * B.at(k, j);
                }
        }
        if (t.nodes_[b.id].needs_grad) {
            for (int i = 0; i < A.rows; ++i)
                for (int k = 0; k < A.cols; ++k) {
                    const double av = A.at(i, k);
                    if (av == 0.0) continue;
                    for (int j = 0; j < B.cols; ++j) dB.at(k, j) += av * dC.at(i, j);
                }
        }
    };
    return {push(std::move(n), "matmul")};
}

Value Tape::add(Value a, Value b) {
    const Tensor& A = nodes_[a.id].val;
    const Tensor& B = nodes_[b.id].val;
    const Broadcast k = broadcast_kind(A, B, "add");
    Node n;
    n.inputs = {a.id, b.id};
    n.val = Tensor(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) n.val.at(i, j) = A.at(i, j) + broadcast_at(B, k, i, j);
    n.backward_fn = [a, b, k](Tape& t, Node& self) {
        const Tensor& dC = self.grad;
        for (int i = 0; i < dC.rows; ++i)
            for (int j = 0; j < dC.cols; ++j) {
                if (t.nodes_[a.id].needs_grad) t.nodes_[a.id].grad.at(i, j) += dC.at(i, j);
                if (t.nodes_[b.id].needs_grad)
                    broadcast_accum(t.nodes_[b.id].grad, k, i, j, dC.at(i, j));
            }
    };
    return {push(std::move(n), "add")};
}

Value Tape::sub(Value a, Value b) {
    const Tensor& A = nodes_[a.id].val;
    const Tensor& B = nodes_[b.id].val;
    const Broadcast k = broadcast_kind(A, B, "sub");
    Node n;
    n.inputs = {a.id, b.id};
    n.val = Tensor(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) n.val.at(i, j) = A.at(i, j) - broadcast_at(B, k, i, j);
    n.backward_fn = [a, b, k](Tape& t, Node& self) {
        const Tensor& dC = self.grad;
        for (int i = 0; i < dC.rows; ++i)
            for (int j = 0; j < dC.cols; ++j) {
                if (t.nodes_[a.id].needs_grad) t.nodes_[a.id].grad.at(i, j) += dC.at(i, j);
                if (t.nodes_[b.id].needs_grad)
                    broadcast_accum(t.nodes_[b.id].grad, k, i, j, -dC.at(i, j));
            }
    };
    return {push(std::move(n), "sub")};
}

Value Tape::mul(Value a, Value b) {
    const Tensor& A = nodes_[a.id].val;
    const Tensor& B = nodes_[b.id].val;
    const Broadcast k = broadcast_kind(A, B, "mul");
    Node n;
    n.inputs = {a.id, b.id};
    n.val = Tensor(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) n.val.at(i, j) = A.at(i, j) * broadcast_at(B, k, i, j);
    n.backward_fn = [a, b, k](Tape& t, Node& self) {
        const Tensor& A = t.nodes_[a.id].val;
        const Tensor& B = t.nodes_[b.id].val;
        const Tensor& dC = self.grad;
        for (int i = 0; i < dC.rows; ++i)
            for (int j = 0; j < dC.cols; ++j) {
                const double g = dC.at(i, j);
                if (t.nodes_[a.id].needs_grad)
                    t.nodes_[a.id].grad.at(i, j) += g * broadcast_at(B, k, i, j);
                if (t.nodes_[b.id].needs_grad)
                    broadcast_accum(t.nodes_[b.id].grad, k, i, j, g * A.at(i, j));
            }
    };
    return {push(std::move(n), "mul")};
}

Value Tape::unary(Value a, const char* op, const std::function<double(double)>& f,
                  const std::function<double(double, double)>& df) {
    const Tensor& A = nodes_[a.id].val;
    Node n;
    n.inputs = {a.id};
    n.val = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.val.data[i] = f(A.data[i]);
    n.backward_fn = [a, df](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        const Tensor& A = t.nodes_[a.id].val;
        Tensor& dA = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < A.size(); ++i)
            dA.data[i] += self.grad.data[i] * df(A.data[i], self.val.data[i]);
    };
    return {push(std::move(n), op)};
}

Value Tape::scale(Value a, double c) {
    return unary(a, "scale", [c](double x) { return c * x; },
                 [c](double, double) { return c; });
}

Value Tape::add_const(Value a, double c) {
    return unary(a, "add_const", [c](double x) { return x + c; },
                 [](double, double) { return 1.0; });
}

Value Tape::relu(Value a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value Tape::elu(Value a) {
    return unary(a, "elu", [](double x) { return x > 0.0 ? x : std::expm1(x); },
                 [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Value Tape::abs(Value a) {
    return unary(a, "abs", [](double x) { return std::abs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Value Tape::softplus(Value a) {
    return unary(a, "softplus",
                 [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
                 [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Value Tape::sigmoid(Value a) {
    return unary(a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Value Tape::square(Value a) {
    return unary(a, "square", [](double x) { return x * x; },
                 [](double x, double) { return 2.0 * x; });
}

Value Tape::select_cols(Value a, const std::vector<int>& col_per_row) {
    const Tensor& A = nodes_[a.id].val;
    if (static_cast<int>(col_per_row.size()) != A.rows)
        throw std::runtime_error("select_cols needs one column index per row");
    Node n;
    n.inputs = {a.id};
    n.aux_idx = col_per_row;
    n.val = Tensor(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
        if (col_per_row[i] < 0 || col_per_row[i] >= A.cols)
            throw std::runtime_error("select_cols index out of range");
        n.val.at(i, 0) = A.at(i, col_per_row[i]);
    }
    n.backward_fn = [a](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        Tensor& dA = t.nodes_[a.id].grad;
        for (int i = 0; i < self.val.rows; ++i)
            dA.at(i, self.aux_idx[i]) += self.grad.at(i, 0);
    };
    return {push(std::move(n), "select_cols")};
}

Value Tape::concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_cols of nothing");
    const int rows = nodes_[parts[0].id].val.rows;
    Node n;
    int total = 0;
    for (Value p : parts) {
        const Tensor& t = nodes_[p.id].val;
        if (t.rows != rows) throw std::runtime_error("concat_cols row mismatch");
        total += t.cols;
        n.inputs.push_back(p.id);
    }
    n.val = Tensor(rows, total);
    int off = 0;
    for (Value p : parts) {
        const Tensor& t = nodes_[p.id].val;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < t.cols; ++j) n.val.at(i, off + j) = t.at(i, j);
        off += t.cols;
    }
    n.backward_fn = [](Tape& t, Node& self) {
        int off = 0;
        for (int src : self.inputs) {
            Tensor& dA = t.nodes_[src].grad;
            const int cols = t.nodes_[src].val.cols;
            if (t.nodes_[src].needs_grad)
                for (int i = 0; i < self.val.rows; ++i)
                    for (int j = 0; j < cols; ++j) dA.at(i, j) += self.grad.at(i, off + j);
            off += cols;
        }
    };
    return {push(std::move(n), "concat_cols")};
}

Value Tape::concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_rows of nothing");
    const int cols = nodes_[parts[0].id].val.cols;
    Node n;
    int total = 0;
    for (Value p : parts) {
        const Tensor& t = nodes_[p.id].val;
        if (t.cols != cols) throw std::runtime_error("concat_rows column mismatch");
        total += t.rows;
        n.inputs.push_back(p.id);
    }
    n.val = Tensor(total, cols);
    int off = 0;
    for (Value p : parts) {
        const Tensor& t = nodes_[p.id].val;
        std::copy(t.data.begin(), t.data.end(),
                  n.val.data.begin() + static_cast<std::size_t>(off) * cols);
        off += t.rows;
    }
    n.backward_fn = [](Tape& t, Node& self) {
        int off = 0;
        for (int src : self.inputs) {
            Tensor& dA = t.nodes_[src].grad;
            const Tensor& v = t.nodes_[src].val;
            if (t.nodes_[src].needs_grad)
                for (int i = 0; i < v.rows; ++i)
                    for (int j = 0; j < v.cols; ++j) dA.at(i, j) += self.grad.at(off + i, j);
            off += v.rows;
        }
    };
    return {push(std::move(n), "concat_rows")};
}

Value Tape::slice_row(Value a, int row) {
    const Tensor& A = nodes_[a.id].val;
    if (row < 0 || row >= A.rows) throw std::runtime_error("slice_row out of range");
    Node n;
    n.inputs = {a.id};
    n.aux_idx = {row};
    n.val = Tensor(1, A.cols);
    for (int j = 0; j < A.cols; ++j) n.val.at(0, j) = A.at(row, j);
    n.backward_fn = [a](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        Tensor& dA = t.nodes_[a.id].grad;
        for (int j = 0; j < self.val.cols; ++j)
            dA.at(self.aux_idx[0], j) += self.grad.at(0, j);
    };
    return {push(std::move(n), "slice_row")};
}

Value Tape::reshape(Value a, int rows, int cols) {
    const Tensor& A = nodes_[a.id].val;
    if (static_cast<std::size_t>(rows) * cols != A.size())
        throw std::runtime_error("reshape size mismatch");
    Node n;
    n.inputs = {a.id};
    n.val = Tensor(rows, cols, A.data);
    n.backward_fn = [a](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        Tensor& dA = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < dA.size(); ++i) dA.data[i] += self.grad.data[i];
    };
    return {push(std::move(n), "reshape")};
}

Value Tape::sum_cols(Value a) {
    const Tensor& A = nodes_[a.id].val;
    Node n;
    n.inputs = {a.id};
    n.val = Tensor(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) s += A.at(i, j);
        n.val.at(i, 0) = s;
    }
    n.backward_fn = [a](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        Tensor& dA = t.nodes_[a.id].grad;
        for (int i = 0; i < dA.rows; ++i)
            for (int j = 0; j < dA.cols; ++j) dA.at(i, j) += self.grad.at(i, 0);
    };
    return {push(std::move(n), "sum_cols")};
}

Value Tape::max_cols(Value a) {
    const Tensor& A = nodes_[a.id].val;
    Node n;
    n.inputs = {a.id};
    n.val = Tensor(A.rows, 1);
    n.aux_idx.resize(A.rows);
    for (int i = 0; i < A.rows; ++i) {
        int best = 0;
        for (int j = 1; j < A.cols; ++j)
            if (A.at(i, j) > A.at(i, best)) best = j;
        n.aux_idx[i] = best;
        n.val.at(i, 0) = A.at(i, best);
    }
    n.backward_fn = [a](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        Tensor& dA = t.nodes_[a.id].grad;
        for (int i = 0; i < self.val.rows; ++i)
            dA.at(i, self.aux_idx[i]) += self.grad.at(i, 0);
    };
    return {push(std::move(n), "max_cols")};
}

Value Tape::sum_all(Value a) {
    const Tensor& A = nodes_[a.id].val;
    Node n;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : A.data) s += v;
    n.val = Tensor::scalar(s);
    n.backward_fn = [a](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        Tensor& dA = t.nodes_[a.id].grad;
        const double g = self.grad.data[0];
        for (double& v : dA.data) v += g;
    };
    return {push(std::move(n), "sum_all")};
}

Value Tape::mean_all(Value a) {
    const Tensor& A = nodes_[a.id].val;
    const double inv = 1.0 / static_cast<double>(A.size());
    Node n;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : A.data) s += v;
    n.val = Tensor::scalar(s * inv);
    n.aux_scalar = inv;
    n.backward_fn = [a](Tape& t, Node& self) {
        if (!t.nodes_[a.id].needs_grad) return;
        Tensor& dA = t.nodes_[a.id].grad;
        const double g = self.grad.data[0] * self.aux_scalar;
        for (double& v : dA.data) v += g;
    };
    return {push(std::move(n), "mean_all")};
}

Value Tape::stop_gradient(Value a) {
    Node n;
    n.val = nodes_[a.id].val;
    // no inputs recorded: the graph is cut here
    return {push(std::move(n), "stop_gradient")};
}

int Tape::node_count() const { return static_cast<int>(nodes_.size()); }

void Tape::backward(Value root) {
    if (root.id < 0 || root.id >= node_count())
        throw std::runtime_error("backward on an invalid node handle");
    Node& r = nodes_[root.id];
    if (r.val.size() != 1)
        throw std::runtime_error("backward requires a scalar root");
    for (Node& n : nodes_) {
        n.grad = Tensor(n.val.rows, n.val.cols);
    }
    r.grad.data[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || !n.backward_fn) continue;
        n.backward_fn(*this, n);
    }
    ran_backward_ = true;
}

const Tensor& Tape::value(Value v) const { return nodes_[v.id].val; }

const Tensor& Tape::gradient(Value v) const {
    if (!ran_backward_) throw std::runtime_error("gradient requested before backward");
    return nodes_[v.id].grad;
}

std::map<std::string, Tensor> Tape::param_grads() const {
    if (!ran_backward_) throw std::runtime_error("gradients requested before backward");
    std::map<std::string, Tensor> out;
    for (const Node& n : nodes_) {
        if (n.param_name.empty()) continue;
        auto it = out.find(n.param_name);
        if (it == out.end()) {
            out.emplace(n.param_name, n.grad);
        } else {
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                it->second.data[i] += n.grad.data[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizers

Optimizer Optimizer::rmsprop() { return rmsprop(RmsProp{}); }

Optimizer Optimizer::rmsprop(RmsProp cfg) {
    Optimizer o;
    o.kind_ = Kind::RmsProp;
    o.rms_ = cfg;
    return o;
}

Optimizer Optimizer::adam() { return adam(Adam{}); }

Optimizer Optimizer::adam(Adam cfg) {
    Optimizer o;
    o.kind_ = Kind::Adam;
    o.adam_ = cfg;
    return o;
}

void Optimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    ++t_;
    for (const auto& [name, g] : grads) {
        Tensor& p = params.get(name);
        if (!p.same_shape(g))
            throw std::invalid_argument("gradient shape mismatch for " + name);
        if (kind_ == Kind::RmsProp) {
            auto [it, fresh] = m2_.try_emplace(name, Tensor(p.rows, p.cols));
            Tensor& v = it->second;
            for (std::size_t i = 0; i < p.size(); ++i) {
                v.data[i] = rms_.decay * v.data[i] + (1.0 - rms_.decay) * g.data[i] * g.data[i];
                p.data[i] -= rms_.lr * g.data[i] / (std::sqrt(v.data[i]) + rms_.eps);
            }
        } else {
            auto [it1, f1] = m1_.try_emplace(name, Tensor(p.rows, p.cols));
            auto [it2, f2] = m2_.try_emplace(name, Tensor(p.rows, p.cols));
            Tensor& m = it1->second;
            Tensor& v = it2->second;
            const double bc1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
            for (std::size_t i = 0; i < p.size(); ++i) {
                m.data[i] = adam_.beta1 * m.data[i] + (1.0 - adam_.beta1) * g.data[i];
                v.data[i] = adam_.beta2 * v.data[i] + (1.0 - adam_.beta2) * g.data[i] * g.data[i];
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                p.data[i] -= adam_.lr * mhat / (std::sqrt(vhat) + adam_.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport grad_check(ParamStore& params,
                           const std::function<double(ParamStore&,
                                                      std::map<std::string, Tensor>*)>& f,
                           double h, double tol) {
    std::map<std::string, Tensor> analytic;
    f(params, &analytic);

    GradCheckReport rep;
    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        const Tensor* g = nullptr;
        auto it = analytic.find(name);
        if (it != analytic.end()) g = &it->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + h;
            const double up = f(params, nullptr);
            p.data[i] = orig - h;
            const double down = f(params, nullptr);
            p.data[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = g ? g->data[i] : 0.0;
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_param = name;
            }
        }
    }
    rep.ok = rep.max_rel_error <= tol;
    return rep;
}

}  // namespace drigm::ad
