#include "s2t/nn/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "s2t/error.hpp"

namespace s2t::nn {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Mat<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  Mat<T> m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

template <typename T>
Mat<T> Tensor<T>::grad() const {
  if (node_->grad.size() == 0) return Mat<T>::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

template <typename T>
Tensor<T> make_result(Mat<T> value, std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& root) {
  require(root.rows() == 1 && root.cols() == 1, "backward() needs a 1x1 root");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()(0, 0) += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat<T> out = a.value() * b.value();
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  Mat<T> out = a.value() * b.value().transpose();
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value;
    if (pb->requires_grad) pb->grad_buffer().noalias() += self.grad.transpose() * pa->value;
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat<T> out = a.value() + b.value();
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) pa->grad_buffer() += self.grad;
    if (pb->requires_grad) pb->grad_buffer() += self.grad;
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Mat<T> out = a.value() - b.value();
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) pa->grad_buffer() += self.grad;
    if (pb->requires_grad) pb->grad_buffer() -= self.grad;
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols");
  Mat<T> out = a.value().rowwise() + row.value().row(0);
  auto pa = a.node().get();
  auto pr = row.node().get();
  return make_result<T>(std::move(out), {a.node(), row.node()}, [pa, pr](Node<T>& self) {
    if (pa->requires_grad) pa->grad_buffer() += self.grad;
    if (pr->requires_grad) pr->grad_buffer() += self.grad.colwise().sum();
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Mat<T> out = a.value().cwiseProduct(b.value());
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) pa->grad_buffer() += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad_buffer() += self.grad.cwiseProduct(pa->value);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Mat<T> out = a.value() * s;
  auto pa = a.node().get();
  return make_result<T>(std::move(out), {a.node()}, [pa, s](Node<T>& self) { pa->grad_buffer() += self.grad * s; });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& a, const Tensor<T>& s) {
  require(s.rows() == 1 && s.cols() == 1, "scale_by: scale must be 1x1");
  Mat<T> out = a.value() * s.item();
  auto pa = a.node().get();
  auto ps = s.node().get();
  return make_result<T>(std::move(out), {a.node(), s.node()}, [pa, ps](Node<T>& self) {
    if (pa->requires_grad) pa->grad_buffer() += self.grad * ps->value(0, 0);
    if (ps->requires_grad) ps->grad_buffer()(0, 0) += self.grad.cwiseProduct(pa->value).sum();
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T c = static_cast<T>(0.044715);
  Mat<T> out = a.value().unaryExpr([k, c](T x) {
    return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x)));
  });
  auto pa = a.node().get();
  return make_result<T>(std::move(out), {a.node()}, [pa, k, c](Node<T>& self) {
    Mat<T> d = pa->value.unaryExpr([k, c](T x) {
      const T t = std::tanh(k * (x + c * x * x * x));
      return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3) * c * x * x);
    });
    pa->grad_buffer() += self.grad.cwiseProduct(d);
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Mat<T> out = a.value().unaryExpr([](T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  });
  auto pa = a.node().get();
  Mat<T> y = out;
  return make_result<T>(std::move(out), {a.node()}, [pa, y = std::move(y)](Node<T>& self) {
    pa->grad_buffer() += self.grad.cwiseProduct(y.cwiseProduct((Mat<T>::Ones(y.rows(), y.cols()) - y)));
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a, bool causal) {
  const auto& x = a.value();
  require(!causal || x.rows() <= x.cols(), "softmax_rows: causal mask needs rows <= cols");
  Mat<T> y = Mat<T>::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index width = causal ? i + 1 : x.cols();
    const T m = x.row(i).head(width).maxCoeff();
    T total = T(0);
    for (Index j = 0; j < width; ++j) {
      y(i, j) = std::exp(x(i, j) - m);
      total += y(i, j);
    }
    y.row(i).head(width) /= total;
  }
  auto pa = a.node().get();
  Mat<T> saved = y;
  return make_result<T>(std::move(y), {a.node()}, [pa, saved = std::move(saved)](Node<T>& self) {
    // dx = y * (dy - sum(dy * y)); masked entries have y = 0.
    Mat<T> dot = self.grad.cwiseProduct(saved).rowwise().sum();
    Mat<T> dx = saved.cwiseProduct(self.grad - dot.replicate(1, saved.cols()));
    pa->grad_buffer() += dx;
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(gamma.rows() == 1 && beta.rows() == 1 && gamma.cols() == x.cols() && beta.cols() == x.cols(),
          "layer_norm: gamma/beta must be 1 x cols");
  const Index n = x.cols();
  Mat<T> xhat(x.rows(), n);
  Mat<T> inv_std(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const T mu = x.value().row(i).mean();
    const auto centered = x.value().row(i).array() - mu;
    const T var = centered.square().mean();
    inv_std(i, 0) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i, 0);
  }
  Mat<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  auto px = x.node().get();
  auto pg = gamma.node().get();
  auto pb = beta.node().get();
  return make_result<T>(std::move(out), {x.node(), gamma.node(), beta.node()},
                        [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Node<T>& self) {
                          if (pg->requires_grad) pg->grad_buffer() += self.grad.cwiseProduct(xhat).colwise().sum();
                          if (pb->requires_grad) pb->grad_buffer() += self.grad.colwise().sum();
                          if (px->requires_grad) {
                            Mat<T> dxhat = self.grad.array().rowwise() * pg->value.row(0).array();
                            auto& g = px->grad_buffer();
                            for (Index i = 0; i < dxhat.rows(); ++i) {
                              const T mean_d = dxhat.row(i).sum() / T(n);
                              const T mean_dx = dxhat.row(i).dot(xhat.row(i)) / T(n);
                              g.row(i).array() += inv_std(i, 0) * (dxhat.row(i).array() - mean_d -
                                                                   xhat.row(i).array() * mean_dx);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<T> out(rows, cols);
  std::vector<NodePtr<T>> parents;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    parents.push_back(p.node());
  }
  return make_result<T>(std::move(out), parents, [](Node<T>& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(off, r);
      off += r;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Mat<T> out = a.value().middleRows(start, count);
  auto pa = a.node().get();
  return make_result<T>(std::move(out), {a.node()}, [pa, start, count](Node<T>& self) {
    pa->grad_buffer().middleRows(start, count) += self.grad;
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  const Index rows = parts[0].rows();
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<T> out(rows, cols);
  std::vector<NodePtr<T>> parents;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    parents.push_back(p.node());
  }
  return make_result<T>(std::move(out), parents, [](Node<T>& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(off, c);
      off += c;
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Mat<T> out = a.value().middleCols(start, count);
  auto pa = a.node().get();
  return make_result<T>(std::move(out), {a.node()}, [pa, start, count](Node<T>& self) {
    pa->grad_buffer().middleCols(start, count) += self.grad;
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  require(a.rows() >= 1, "mean_rows: empty input");
  Mat<T> out = a.value().colwise().mean();
  auto pa = a.node().get();
  return make_result<T>(std::move(out), {a.node()}, [pa](Node<T>& self) {
    const T inv = T(1) / T(pa->value.rows());
    pa->grad_buffer().rowwise() += self.grad.row(0) * inv;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Mat<T> out(1, 1);
  out(0, 0) = a.value().sum();
  auto pa = a.node().get();
  return make_result<T>(std::move(out), {a.node()},
                        [pa](Node<T>& self) { pa->grad_buffer().array() += self.grad(0, 0); });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
  Mat<T> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw IndexError("gather_rows: id out of range");
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  auto pt = table.node().get();
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result<T>(std::move(out), {table.node()}, [pt, saved = std::move(saved)](Node<T>& self) {
    auto& g = pt->grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i) g.row(saved[i]) += self.grad.row(static_cast<Index>(i));
  });
}

#define S2T_INSTANTIATE(T)                                                                               \
  template class Tensor<T>;                                                                              \
  template Tensor<T> make_result<T>(Mat<T>, std::vector<NodePtr<T>>, std::function<void(Node<T>&)>);     \
  template void backward<T>(const Tensor<T>&);                                                           \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                      \
  template Tensor<T> scale_by<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                          \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                       \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&, bool);                                            \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
  template Tensor<T> concat_rows<T>(std::span<const Tensor<T>>);                                         \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, Index, Index);                                      \
  template Tensor<T> concat_cols<T>(std::span<const Tensor<T>>);                                         \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, Index, Index);                                      \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                                                     \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                           \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const int>);

S2T_INSTANTIATE(float)
S2T_INSTANTIATE(double)

#undef S2T_INSTANTIATE

}  // namespace s2t::nn
