#include "hrg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "hrg/kernels.hpp"

namespace hrg {

namespace {

thread_local bool g_grad_enabled = true;
thread_local OpCounter g_op_counter;
thread_local uint64_t g_visit_epoch = 0;

const kern::Kernels& K() { return kern::active(); }

}  // namespace

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

OpCounter& op_counter() { return g_op_counter; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace detail {

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

}  // namespace detail

using detail::Node;
using detail::NodePtr;

Tensor wrap_node(NodePtr n) { return Tensor(std::move(n)); }

namespace {

NodePtr new_node(Shape shape) {
    auto n = std::make_shared<Node>();
    const int64_t count = numel(shape);
    if (count <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(count), 0.0);
    return n;
}

// Attaches parents + backward only when grads can flow; otherwise the node
// stays a plain constant and the whole subgraph is collectible.
Tensor finish(NodePtr out, std::vector<NodePtr> parents,
              std::function<void(Node&)> backward) {
    if (g_grad_enabled) {
        bool need = false;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                need = true;
                break;
            }
        }
        if (need) {
            out->requires_grad = true;
            out->parents = std::move(parents);
            out->backward = std::move(backward);
        }
    }
    return wrap_node(std::move(out));
}

void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape()));
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return wrap_node(new_node(std::move(shape))); }

Tensor Tensor::full(Shape shape, double v) {
    auto n = new_node(std::move(shape));
    std::fill(n->value.begin(), n->value.end(), v);
    return wrap_node(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    auto n = new_node(std::move(shape));
    if (static_cast<int64_t>(data.size()) != numel(n->shape)) {
        throw ShapeError("from_data: " + shape_str(n->shape) + " needs " +
                         std::to_string(numel(n->shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    n->value = std::move(data);
    return wrap_node(std::move(n));
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
    Tensor t = from_data(std::move(shape), std::move(data));
    t.n_->requires_grad = true;
    return t;
}

const Shape& Tensor::shape() const { return n_->shape; }
int Tensor::rank() const { return static_cast<int>(n_->shape.size()); }
int Tensor::dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
int64_t Tensor::size() const { return static_cast<int64_t>(n_->value.size()); }

int Tensor::rows() const {
    check_rank2(*this, "rows");
    return n_->shape[0];
}

int Tensor::cols() const {
    check_rank2(*this, "cols");
    return n_->shape[1];
}

const std::vector<double>& Tensor::values() const { return n_->value; }
std::vector<double>& Tensor::mutable_values() { return n_->value; }

double Tensor::at(int64_t i) const { return n_->value[static_cast<size_t>(i)]; }

double Tensor::at(int i, int j) const {
    check_rank2(*this, "at");
    return n_->value[static_cast<size_t>(i) * static_cast<size_t>(cols()) +
                     static_cast<size_t>(j)];
}

bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }
bool Tensor::has_grad() const { return n_ && !n_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad(): no gradient present");
    return n_->grad;
}

void Tensor::zero_grad() const {
    if (n_) n_->grad.clear();
}

void Tensor::backward() const {
    if (!n_) throw ContractError("backward: undefined tensor");
    if (size() != 1) {
        throw ContractError("backward: loss must be scalar, got " +
                            shape_str(shape()));
    }
    if (!n_->requires_grad) return;  // nothing reachable requires grad

    // Post-order DFS over grad-requiring parents.
    const uint64_t epoch = ++g_visit_epoch;
    std::vector<Node*> order;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    n_->visit_mark = epoch;
    stack.push_back({n_.get(), 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && p->visit_mark != epoch) {
                p->visit_mark = epoch;
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    // Non-leaf grads are per-pass scratch; leaf grads persist and accumulate.
    for (Node* node : order) {
        if (!node->is_leaf()) {
            node->grad.assign(node->value.size(), 0.0);
        }
    }
    n_->ensure_grad()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward) node->backward(*node);
    }
}

Tensor Tensor::detached() const {
    return from_data(n_->shape, n_->value);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (numel(shape) != size()) {
        throw ShapeError("reshaped: cannot view " + shape_str(this->shape()) +
                         " as " + shape_str(shape));
    }
    auto out = new_node(std::move(shape));
    out->value = n_->value;
    return finish(std::move(out), {n_}, [](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        K().add(x.ensure_grad().data(), self.grad.data(), x.grad.data(),
                x.grad.size());
    });
}

// ---- binary elementwise ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner extents disagree, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    auto out = new_node({m, n});
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* cv = out->value.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            K().axpy(av[i * k + p], bv + static_cast<size_t>(p) * n,
                     cv + static_cast<size_t>(i) * n, static_cast<size_t>(n));
        }
    }
    g_op_counter.add(static_cast<uint64_t>(m) * static_cast<uint64_t>(k) *
                     static_cast<uint64_t>(n));
    return finish(std::move(out), {a.node_ptr(), b.node_ptr()},
                  [m, k, n](Node& self) {
                      Node& A = *self.parents[0];
                      Node& B = *self.parents[1];
                      const double* g = self.grad.data();
                      if (A.requires_grad) {
                          double* ga = A.ensure_grad().data();
                          const double* bv = B.value.data();
                          // dA = dC * B^T, one dot per entry (rows of both).
                          for (int i = 0; i < m; ++i) {
                              for (int p = 0; p < k; ++p) {
                                  ga[i * k + p] +=
                                      K().dot(g + static_cast<size_t>(i) * n,
                                              bv + static_cast<size_t>(p) * n,
                                              static_cast<size_t>(n));
                              }
                          }
                      }
                      if (B.requires_grad) {
                          double* gb = B.ensure_grad().data();
                          const double* av = A.value.data();
                          // dB = A^T * dC, accumulated row-wise.
                          for (int i = 0; i < m; ++i) {
                              for (int p = 0; p < k; ++p) {
                                  K().axpy(av[i * k + p],
                                           g + static_cast<size_t>(i) * n,
                                           gb + static_cast<size_t>(p) * n,
                                           static_cast<size_t>(n));
                              }
                          }
                      }
                  });
}

Tensor transpose(const Tensor& a) {
    check_rank2(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    auto out = new_node({n, m});
    const double* av = a.values().data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out->value[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
        }
    }
    return finish(std::move(out), {a.node_ptr()}, [m, n](Node& self) {
        Node& A = *self.parents[0];
        if (!A.requires_grad) return;
        double* ga = A.ensure_grad().data();
        const double* g = self.grad.data();
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < m; ++i) {
                ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto out = new_node(a.shape());
    K().add(a.values().data(), b.values().data(), out->value.data(),
            out->value.size());
    return finish(std::move(out),
                  {a.node_ptr(), b.node_ptr()},
                  [](Node& self) {
                      for (int s = 0; s < 2; ++s) {
                          Node& p = *self.parents[static_cast<size_t>(s)];
                          if (p.requires_grad) {
                              K().axpy(1.0, self.grad.data(),
                                       p.ensure_grad().data(), self.grad.size());
                          }
                      }
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto out = new_node(a.shape());
    K().sub(a.values().data(), b.values().data(), out->value.data(),
            out->value.size());
    return finish(std::move(out),
                  {a.node_ptr(), b.node_ptr()},
                  [](Node& self) {
                      Node& a = *self.parents[0];
                      Node& b = *self.parents[1];
                      if (a.requires_grad) {
                          K().axpy(1.0, self.grad.data(), a.ensure_grad().data(),
                                   self.grad.size());
                      }
                      if (b.requires_grad) {
                          K().axpy(-1.0, self.grad.data(), b.ensure_grad().data(),
                                   self.grad.size());
                      }
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto out = new_node(a.shape());
    K().mul(a.values().data(), b.values().data(), out->value.data(),
            out->value.size());
    return finish(std::move(out),
                  {a.node_ptr(), b.node_ptr()},
                  [](Node& self) {
                      Node& a = *self.parents[0];
                      Node& b = *self.parents[1];
                      const double* g = self.grad.data();
                      const size_t n = self.grad.size();
                      if (a.requires_grad) {
                          double* ga = a.ensure_grad().data();
                          const double* bv = b.value.data();
                          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
                      }
                      if (b.requires_grad) {
                          double* gb = b.ensure_grad().data();
                          const double* av = a.value.data();
                          for (size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
                      }
                  });
}

Tensor scale(const Tensor& x, double c) {
    auto out = new_node(x.shape());
    K().scale(c, x.values().data(), out->value.data(), out->value.size());
    return finish(std::move(out), {x.node_ptr()}, [c](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        K().axpy(c, self.grad.data(), x.ensure_grad().data(), self.grad.size());
    });
}

Tensor add_scalar(const Tensor& x, double c) {
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = xv[i] + c;
    return finish(std::move(out), {x.node_ptr()}, [](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        K().axpy(1.0, self.grad.data(), x.ensure_grad().data(), self.grad.size());
    });
}

// ---- broadcast helpers -----------------------------------------------------

Tensor rowwise_add(const Tensor& x, const Tensor& v) {
    check_rank2(x, "rowwise_add");
    if (v.rank() != 1 || v.dim(0) != x.cols()) {
        throw ShapeError("rowwise_add: vector " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
    }
    const int r = x.rows(), c = x.cols();
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    const double* vv = v.values().data();
    for (int i = 0; i < r; ++i) {
        K().add(xv + static_cast<size_t>(i) * c, vv,
                out->value.data() + static_cast<size_t>(i) * c,
                static_cast<size_t>(c));
    }
    return finish(std::move(out),
                  {x.node_ptr(), v.node_ptr()},
                  [r, c](Node& self) {
                      Node& x = *self.parents[0];
                      Node& v = *self.parents[1];
                      const double* g = self.grad.data();
                      if (x.requires_grad) {
                          K().axpy(1.0, g, x.ensure_grad().data(), self.grad.size());
                      }
                      if (v.requires_grad) {
                          double* gv = v.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              K().axpy(1.0, g + static_cast<size_t>(i) * c, gv,
                                       static_cast<size_t>(c));
                          }
                      }
                  });
}

Tensor rowwise_mul(const Tensor& x, const Tensor& v) {
    check_rank2(x, "rowwise_mul");
    if (v.rank() != 1 || v.dim(0) != x.cols()) {
        throw ShapeError("rowwise_mul: vector " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
    }
    const int r = x.rows(), c = x.cols();
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    const double* vv = v.values().data();
    for (int i = 0; i < r; ++i) {
        K().mul(xv + static_cast<size_t>(i) * c, vv,
                out->value.data() + static_cast<size_t>(i) * c,
                static_cast<size_t>(c));
    }
    return finish(std::move(out),
                  {x.node_ptr(), v.node_ptr()},
                  [r, c](Node& self) {
                      Node& x = *self.parents[0];
                      Node& v = *self.parents[1];
                      const double* g = self.grad.data();
                      const double* xv = x.value.data();
                      const double* vv = v.value.data();
                      if (x.requires_grad) {
                          double* gx = x.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              for (int j = 0; j < c; ++j) {
                                  gx[static_cast<size_t>(i) * c + j] +=
                                      g[static_cast<size_t>(i) * c + j] * vv[j];
                              }
                          }
                      }
                      if (v.requires_grad) {
                          double* gv = v.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              for (int j = 0; j < c; ++j) {
                                  gv[j] += g[static_cast<size_t>(i) * c + j] *
                                           xv[static_cast<size_t>(i) * c + j];
                              }
                          }
                      }
                  });
}

namespace {

void check_per_row(const Tensor& x, const Tensor& s, const char* op) {
    check_rank2(x, op);
    if (s.rank() != 1 || s.dim(0) != x.rows()) {
        throw ShapeError(std::string(op) + ": vector " + shape_str(s.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
    }
}

}  // namespace

Tensor colwise_sub(const Tensor& x, const Tensor& s) {
    check_per_row(x, s, "colwise_sub");
    const int r = x.rows(), c = x.cols();
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    const double* sv = s.values().data();
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            out->value[static_cast<size_t>(i) * c + j] = xv[static_cast<size_t>(i) * c + j] - sv[i];
        }
    }
    return finish(std::move(out),
                  {x.node_ptr(), s.node_ptr()},
                  [r, c](Node& self) {
                      Node& x = *self.parents[0];
                      Node& s = *self.parents[1];
                      const double* g = self.grad.data();
                      if (x.requires_grad) {
                          K().axpy(1.0, g, x.ensure_grad().data(), self.grad.size());
                      }
                      if (s.requires_grad) {
                          double* gs = s.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              gs[i] -= K().sum(g + static_cast<size_t>(i) * c,
                                               static_cast<size_t>(c));
                          }
                      }
                  });
}

Tensor colwise_mul(const Tensor& x, const Tensor& s) {
    check_per_row(x, s, "colwise_mul");
    const int r = x.rows(), c = x.cols();
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    const double* sv = s.values().data();
    for (int i = 0; i < r; ++i) {
        K().scale(sv[i], xv + static_cast<size_t>(i) * c,
                  out->value.data() + static_cast<size_t>(i) * c,
                  static_cast<size_t>(c));
    }
    return finish(std::move(out),
                  {x.node_ptr(), s.node_ptr()},
                  [r, c](Node& self) {
                      Node& x = *self.parents[0];
                      Node& s = *self.parents[1];
                      const double* g = self.grad.data();
                      const double* xv = x.value.data();
                      const double* sv = s.value.data();
                      if (x.requires_grad) {
                          double* gx = x.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              K().axpy(sv[i], g + static_cast<size_t>(i) * c,
                                       gx + static_cast<size_t>(i) * c,
                                       static_cast<size_t>(c));
                          }
                      }
                      if (s.requires_grad) {
                          double* gs = s.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              gs[i] += K().dot(g + static_cast<size_t>(i) * c,
                                               xv + static_cast<size_t>(i) * c,
                                               static_cast<size_t>(c));
                          }
                      }
                  });
}

Tensor colwise_div(const Tensor& x, const Tensor& s) {
    check_per_row(x, s, "colwise_div");
    const int r = x.rows(), c = x.cols();
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    const double* sv = s.values().data();
    for (int i = 0; i < r; ++i) {
        if (sv[i] == 0.0) throw ContractError("colwise_div: zero divisor");
        K().scale(1.0 / sv[i], xv + static_cast<size_t>(i) * c,
                  out->value.data() + static_cast<size_t>(i) * c,
                  static_cast<size_t>(c));
    }
    return finish(std::move(out),
                  {x.node_ptr(), s.node_ptr()},
                  [r, c](Node& self) {
                      Node& x = *self.parents[0];
                      Node& s = *self.parents[1];
                      const double* g = self.grad.data();
                      const double* xv = x.value.data();
                      const double* sv = s.value.data();
                      if (x.requires_grad) {
                          double* gx = x.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              K().axpy(1.0 / sv[i], g + static_cast<size_t>(i) * c,
                                       gx + static_cast<size_t>(i) * c,
                                       static_cast<size_t>(c));
                          }
                      }
                      if (s.requires_grad) {
                          double* gs = s.ensure_grad().data();
                          for (int i = 0; i < r; ++i) {
                              const double d = K().dot(g + static_cast<size_t>(i) * c,
                                                       xv + static_cast<size_t>(i) * c,
                                                       static_cast<size_t>(c));
                              gs[i] -= d / (sv[i] * sv[i]);
                          }
                      }
                  });
}

// ---- reductions ------------------------------------------------------------

Tensor row_sum(const Tensor& x) {
    check_rank2(x, "row_sum");
    const int r = x.rows(), c = x.cols();
    auto out = new_node({r});
    const double* xv = x.values().data();
    for (int i = 0; i < r; ++i) {
        out->value[static_cast<size_t>(i)] =
            K().sum(xv + static_cast<size_t>(i) * c, static_cast<size_t>(c));
    }
    return finish(std::move(out), {x.node_ptr()}, [r, c](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        for (int i = 0; i < r; ++i) {
            const double g = self.grad[static_cast<size_t>(i)];
            for (int j = 0; j < c; ++j) gx[static_cast<size_t>(i) * c + j] += g;
        }
    });
}

Tensor row_mean(const Tensor& x) {
    return scale(row_sum(x), 1.0 / x.cols());
}

Tensor sum_all(const Tensor& x) {
    auto out = new_node({1});
    out->value[0] = K().sum(x.values().data(), x.values().size());
    return finish(std::move(out), {x.node_ptr()}, [](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        const double g = self.grad[0];
        for (size_t i = 0; i < x.grad.size(); ++i) gx[i] += g;
    });
}

Tensor mean_all(const Tensor& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---- elementwise nonlinearities ---------------------------------------------

Tensor sqrt_elem(const Tensor& x) {
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    for (size_t i = 0; i < out->value.size(); ++i) {
        if (xv[i] < 0.0) throw ContractError("sqrt_elem: negative input");
        out->value[i] = std::sqrt(xv[i]);
    }
    return finish(std::move(out), {x.node_ptr()}, [](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            gx[i] += self.grad[i] * 0.5 / self.value[i];
        }
    });
}

Tensor gelu(const Tensor& x) {
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (size_t i = 0; i < out->value.size(); ++i) {
        out->value[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
    }
    return finish(std::move(out), {x.node_ptr()}, [](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        const double* xv = x.value.data();
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(xv[i] * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv[i] * xv[i]);
            gx[i] += self.grad[i] * (cdf + xv[i] * pdf);
        }
    });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw ContractError("clamp: lo > hi");
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    for (size_t i = 0; i < out->value.size(); ++i) {
        out->value[i] = std::min(std::max(xv[i], lo), hi);
    }
    return finish(std::move(out), {x.node_ptr()}, [lo, hi](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        const double* xv = x.value.data();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (xv[i] >= lo && xv[i] <= hi) gx[i] += self.grad[i];
        }
    });
}

// ---- softmax ----------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
    check_rank2(x, "softmax_rows");
    const int r = x.rows(), c = x.cols();
    auto out = new_node(x.shape());
    const double* xv = x.values().data();
    for (int i = 0; i < r; ++i) {
        const double* row = xv + static_cast<size_t>(i) * c;
        double* yrow = out->value.data() + static_cast<size_t>(i) * c;
        const double m = K().max(row, static_cast<size_t>(c));
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            yrow[j] = std::exp(row[j] - m);
            s += yrow[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < c; ++j) yrow[j] *= inv;
    }
    return finish(std::move(out), {x.node_ptr()}, [r, c](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        for (int i = 0; i < r; ++i) {
            const double* y = self.value.data() + static_cast<size_t>(i) * c;
            const double* g = self.grad.data() + static_cast<size_t>(i) * c;
            const double gy = K().dot(g, y, static_cast<size_t>(c));
            for (int j = 0; j < c; ++j) {
                gx[static_cast<size_t>(i) * c + j] += y[j] * (g[j] - gy);
            }
        }
    });
}

Tensor masked_softmax_rows(const Tensor& x, const Tensor& mask) {
    check_same_shape(x, mask, "masked_softmax_rows");
    // Additive -1e9 surrogate pushes masked logits below exp underflow; the
    // final elementwise product guarantees exact zeros, including the
    // all-zero-row case where the shifted softmax would be uniform.
    auto shift = Tensor::zeros(mask.shape());
    const double* mv = mask.values().data();
    for (size_t i = 0; i < shift.values().size(); ++i) {
        shift.mutable_values()[i] = (mv[i] - 1.0) * 1e9;
    }
    return mul(softmax_rows(add(x, shift)), mask);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    check_rank2(x, "layer_norm");
    if (x.cols() < 2) throw ContractError("layer_norm: needs at least 2 columns");
    const Tensor mu = row_mean(x);
    const Tensor centered = colwise_sub(x, mu);
    const Tensor var = row_mean(mul(centered, centered));
    const Tensor sd = sqrt_elem(add_scalar(var, 1e-5));
    const Tensor normed = colwise_div(centered, sd);
    return rowwise_add(rowwise_mul(normed, gain), bias);
}

// ---- shape surgery ------------------------------------------------------------

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    check_rank2(x, "gather_rows");
    const int r = x.rows(), c = x.cols();
    if (idx.empty()) throw ContractError("gather_rows: empty index list");
    for (int i : idx) {
        if (i < 0 || i >= r) {
            throw ShapeError("gather_rows: index " + std::to_string(i) +
                             " out of range [0," + std::to_string(r) + ")");
        }
    }
    auto out = new_node({static_cast<int>(idx.size()), c});
    const double* xv = x.values().data();
    for (size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(xv + static_cast<size_t>(idx[k]) * c, c,
                    out->value.data() + k * static_cast<size_t>(c));
    }
    return finish(std::move(out), {x.node_ptr()}, [idx, c](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        for (size_t k = 0; k < idx.size(); ++k) {
            K().axpy(1.0, self.grad.data() + k * static_cast<size_t>(c),
                     gx + static_cast<size_t>(idx[k]) * c, static_cast<size_t>(c));
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_rows: empty list");
    const int c = xs[0].cols();
    int total = 0;
    for (const Tensor& t : xs) {
        if (t.cols() != c) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(t.shape()));
        }
        total += t.rows();
    }
    auto out = new_node({total, c});
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    size_t off = 0;
    for (const Tensor& t : xs) {
        std::copy(t.values().begin(), t.values().end(), out->value.begin() + static_cast<long>(off));
        off += t.values().size();
        parents.push_back(t.node_ptr());
    }
    return finish(std::move(out), std::move(parents), [](Node& self) {
        size_t off = 0;
        for (auto& p : self.parents) {
            const size_t len = p->value.size();
            if (p->requires_grad) {
                K().axpy(1.0, self.grad.data() + off, p->ensure_grad().data(), len);
            }
            off += len;
        }
    });
}

Tensor slice_cols(const Tensor& x, int c0, int len) {
    check_rank2(x, "slice_cols");
    const int r = x.rows(), c = x.cols();
    if (c0 < 0 || len <= 0 || c0 + len > c) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c0 + len) + ") out of " + std::to_string(c));
    }
    auto out = new_node({r, len});
    const double* xv = x.values().data();
    for (int i = 0; i < r; ++i) {
        std::copy_n(xv + static_cast<size_t>(i) * c + c0, len,
                    out->value.data() + static_cast<size_t>(i) * len);
    }
    return finish(std::move(out), {x.node_ptr()}, [r, c, c0, len](Node& self) {
        Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        double* gx = x.ensure_grad().data();
        for (int i = 0; i < r; ++i) {
            K().axpy(1.0, self.grad.data() + static_cast<size_t>(i) * len,
                     gx + static_cast<size_t>(i) * c + c0, static_cast<size_t>(len));
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_cols: empty list");
    const int r = xs[0].rows();
    int total = 0;
    for (const Tensor& t : xs) {
        if (t.rows() != r) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(t.shape()));
        }
        total += t.cols();
    }
    auto out = new_node({r, total});
    std::vector<NodePtr> parents;
    std::vector<int> widths;
    parents.reserve(xs.size());
    int off = 0;
    for (const Tensor& t : xs) {
        const int w = t.cols();
        for (int i = 0; i < r; ++i) {
            std::copy_n(t.values().data() + static_cast<size_t>(i) * w, w,
                        out->value.data() + static_cast<size_t>(i) * total + off);
        }
        off += w;
        widths.push_back(w);
        parents.push_back(t.node_ptr());
    }
    return finish(std::move(out), std::move(parents), [r, total, widths](Node& self) {
        int off = 0;
        for (size_t s = 0; s < self.parents.size(); ++s) {
            Node& p = *self.parents[s];
            const int w = widths[s];
            if (p.requires_grad) {
                double* gp = p.ensure_grad().data();
                for (int i = 0; i < r; ++i) {
                    K().axpy(1.0, self.grad.data() + static_cast<size_t>(i) * total + off,
                             gp + static_cast<size_t>(i) * w, static_cast<size_t>(w));
                }
            }
            off += w;
        }
    });
}

Tensor stack_scalars(const std::vector<Tensor>& xs, Shape shape) {
    if (static_cast<int64_t>(xs.size()) != numel(shape)) {
        throw ShapeError("stack_scalars: " + std::to_string(xs.size()) +
                         " scalars cannot fill " + shape_str(shape));
    }
    auto out = new_node(std::move(shape));
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].size() != 1) throw ShapeError("stack_scalars: non-scalar element");
        out->value[i] = xs[i].at(0);
        parents.push_back(xs[i].node_ptr());
    }
    return finish(std::move(out), std::move(parents), [](Node& self) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (p.requires_grad) p.ensure_grad()[0] += self.grad[i];
        }
    });
}

// ---- losses and alignment metrics ---------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_rank2(logits, "cross_entropy");
    const int r = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != r) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(r) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || y >= c) {
            throw ContractError("cross_entropy: label " + std::to_string(y) +
                                " outside [0," + std::to_string(c) + ")");
        }
    }
    auto out = new_node({1});
    const double* xv = logits.values().data();
    // Probabilities are kept for the backward closure.
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(r) * c);
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const double* row = xv + static_cast<size_t>(i) * c;
        double* prow = probs->data() + static_cast<size_t>(i) * c;
        const double m = K().max(row, static_cast<size_t>(c));
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - m);
            s += prow[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < c; ++j) prow[j] *= inv;
        total += m + std::log(s) - row[labels[static_cast<size_t>(i)]];
    }
    out->value[0] = total / r;
    return finish(std::move(out), {logits.node_ptr()},
                  [r, c, labels, probs](Node& self) {
                      Node& x = *self.parents[0];
                      if (!x.requires_grad) return;
                      double* gx = x.ensure_grad().data();
                      const double g = self.grad[0] / r;
                      for (int i = 0; i < r; ++i) {
                          const double* prow = probs->data() + static_cast<size_t>(i) * c;
                          for (int j = 0; j < c; ++j) {
                              gx[static_cast<size_t>(i) * c + j] += g * prow[j];
                          }
                          gx[static_cast<size_t>(i) * c + labels[static_cast<size_t>(i)]] -= g;
                      }
                  });
}

namespace {

constexpr double kInf = 1e300;

// Stabilized three-way soft-min; arguments may be kInf (absent predecessor).
double softmin3(double a, double b, double c, double gamma) {
    const double m = std::min(a, std::min(b, c));
    if (gamma == 0.0 || m >= kInf) return m;
    double z = 0.0;
    if (a < kInf) z += std::exp(-(a - m) / gamma);
    if (b < kInf) z += std::exp(-(b - m) / gamma);
    if (c < kInf) z += std::exp(-(c - m) / gamma);
    return m - gamma * std::log(z);
}

}  // namespace

Tensor soft_dtw(const Tensor& dist, double gamma) {
    check_rank2(dist, "soft_dtw");
    if (gamma < 0.0) throw ContractError("soft_dtw: gamma must be >= 0");
    const int tq = dist.rows(), ts = dist.cols();
    const double* d = dist.values().data();

    auto r_mat = std::make_shared<std::vector<double>>(static_cast<size_t>(tq) * ts);
    auto& R = *r_mat;
    auto rc = [&](int i, int j) -> double {
        if (i < 0 || j < 0) return kInf;
        return R[static_cast<size_t>(i) * ts + j];
    };
    for (int i = 0; i < tq; ++i) {
        for (int j = 0; j < ts; ++j) {
            const double best = (i == 0 && j == 0)
                                    ? 0.0
                                    : softmin3(rc(i - 1, j), rc(i, j - 1),
                                               rc(i - 1, j - 1), gamma);
            R[static_cast<size_t>(i) * ts + j] = d[static_cast<size_t>(i) * ts + j] + best;
        }
    }

    auto out = new_node({1});
    out->value[0] = R[static_cast<size_t>(tq - 1) * ts + (ts - 1)];
    return finish(std::move(out), {dist.node_ptr()},
                  [tq, ts, gamma, r_mat](Node& self) {
                      Node& dist = *self.parents[0];
                      if (!dist.requires_grad) return;
                      if (gamma == 0.0) {
                          throw ContractError("soft_dtw: backward requires gamma > 0");
                      }
                      const auto& R = *r_mat;
                      const double* d = dist.value.data();
                      // E[i][j] = d(final)/d(R[i][j]) via the reverse recursion;
                      // transition weight from (i,j) to successor (i',j') is
                      // exp((R[i'][j'] - d[i'][j'] - R[i][j]) / gamma), which is
                      // always <= 1 because soft-min is below each argument.
                      std::vector<double> E(static_cast<size_t>(tq) * ts, 0.0);
                      E[static_cast<size_t>(tq - 1) * ts + (ts - 1)] = 1.0;
                      auto w = [&](int si, int sj, int pi, int pj) {
                          return std::exp((R[static_cast<size_t>(si) * ts + sj] -
                                           d[static_cast<size_t>(si) * ts + sj] -
                                           R[static_cast<size_t>(pi) * ts + pj]) /
                                          gamma);
                      };
                      for (int i = tq - 1; i >= 0; --i) {
                          for (int j = ts - 1; j >= 0; --j) {
                              if (i == tq - 1 && j == ts - 1) continue;
                              double e = 0.0;
                              if (i + 1 < tq) e += E[static_cast<size_t>(i + 1) * ts + j] * w(i + 1, j, i, j);
                              if (j + 1 < ts) e += E[static_cast<size_t>(i) * ts + j + 1] * w(i, j + 1, i, j);
                              if (i + 1 < tq && j + 1 < ts) {
                                  e += E[static_cast<size_t>(i + 1) * ts + j + 1] * w(i + 1, j + 1, i, j);
                              }
                              E[static_cast<size_t>(i) * ts + j] = e;
                          }
                      }
                      double* gd = dist.ensure_grad().data();
                      K().axpy(self.grad[0], E.data(), gd, E.size());
                  });
}

Tensor bimhm(const Tensor& dist) {
    check_rank2(dist, "bimhm");
    const int tq = dist.rows(), ts = dist.cols();
    const double* d = dist.values().data();
    auto row_arg = std::make_shared<std::vector<int>>(static_cast<size_t>(tq));
    auto col_arg = std::make_shared<std::vector<int>>(static_cast<size_t>(ts));
    double row_term = 0.0;
    for (int i = 0; i < tq; ++i) {
        int best = 0;
        for (int j = 1; j < ts; ++j) {
            if (d[static_cast<size_t>(i) * ts + j] < d[static_cast<size_t>(i) * ts + best]) best = j;
        }
        (*row_arg)[static_cast<size_t>(i)] = best;
        row_term += d[static_cast<size_t>(i) * ts + best];
    }
    double col_term = 0.0;
    for (int j = 0; j < ts; ++j) {
        int best = 0;
        for (int i = 1; i < tq; ++i) {
            if (d[static_cast<size_t>(i) * ts + j] < d[static_cast<size_t>(best) * ts + j]) best = i;
        }
        (*col_arg)[static_cast<size_t>(j)] = best;
        col_term += d[static_cast<size_t>(best) * ts + j];
    }
    auto out = new_node({1});
    out->value[0] = 0.5 * (row_term / tq + col_term / ts);
    return finish(std::move(out), {dist.node_ptr()},
                  [tq, ts, row_arg, col_arg](Node& self) {
                      Node& dist = *self.parents[0];
                      if (!dist.requires_grad) return;
                      double* gd = dist.ensure_grad().data();
                      const double g = self.grad[0];
                      for (int i = 0; i < tq; ++i) {
                          gd[static_cast<size_t>(i) * ts + (*row_arg)[static_cast<size_t>(i)]] +=
                              g * 0.5 / tq;
                      }
                      for (int j = 0; j < ts; ++j) {
                          gd[static_cast<size_t>((*col_arg)[static_cast<size_t>(j)]) * ts + j] +=
                              g * 0.5 / ts;
                      }
                  });
}

}  // namespace hrg
