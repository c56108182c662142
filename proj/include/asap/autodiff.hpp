#pragma once

// Reverse-mode automatic differentiation over batches of dense Eigen
// matrices. A Node holds one matrix per batch slot; parameters and other
// shared values live in a single slot and broadcast across the batch.
// Graphs are built eagerly by the free functions below and differentiated
// by backward(); all reductions run in slot order so results are
// deterministic.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "asap/errors.hpp"

namespace asap {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
struct Node {
  std::vector<Mat<S>> val;
  std::vector<Mat<S>> grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backprop;
  bool needs_grad = false;

  int slots() const { return static_cast<int>(val.size()); }

  void ensure_grad() {
    if (grad.size() == val.size()) return;
    grad.resize(val.size());
    for (size_t i = 0; i < val.size(); ++i)
      grad[i] = Mat<S>::Zero(val[i].rows(), val[i].cols());
  }

  bool has_grad() const { return grad.size() == val.size(); }

  void zero_grad() {
    for (auto& g : grad) g.setZero();
  }
};

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

// Graph-building context. When grad is disabled the ops still compute
// values but record no parents or backprop closures, so teacher/eval
// forwards stay cheap and are garbage-collected op by op.
template <class S>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}
  bool grad_enabled() const { return grad_; }

 private:
  bool grad_;
};

namespace detail {

template <class S>
const Mat<S>& slot(const NodePtr<S>& n, int b) {
  return n->val[n->slots() == 1 ? 0 : b];
}

template <class S>
int out_slots(const NodePtr<S>& a, const NodePtr<S>& b) {
  const int sa = a->slots(), sb = b->slots();
  if (sa == sb) return sa;
  if (sa == 1) return sb;
  if (sb == 1) return sa;
  throw ShapeError("mismatched batch slot counts: " + std::to_string(sa) +
                   " vs " + std::to_string(sb));
}

// Accumulates a shape-matched partial into the parent grad slot that fed
// output slot b (broadcast parents receive the sum over the batch). The
// destination never aliases the partial's operands, so products accumulate
// without a temporary.
template <class S, class D>
void accum(const NodePtr<S>& n, int b, const Eigen::MatrixBase<D>& partial) {
  n->ensure_grad();
  n->grad[n->slots() == 1 ? 0 : b].noalias() += partial.derived();
}

template <class S>
NodePtr<S> make(std::vector<Mat<S>> v) {
  auto n = std::make_shared<Node<S>>();
  n->val = std::move(v);
  return n;
}

template <class S, class F>
void attach(Tape<S>& t, const NodePtr<S>& out,
            std::vector<NodePtr<S>> parents, F&& fn) {
  if (!t.grad_enabled()) return;
  bool any = false;
  for (const auto& p : parents) any = any || p->needs_grad;
  if (!any) return;
  out->needs_grad = true;
  out->parents = std::move(parents);
  out->backprop = std::forward<F>(fn);
}

template <class S>
bool scalar_shaped(const NodePtr<S>& n) {
  return n->val[0].rows() == 1 && n->val[0].cols() == 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Leaves

template <class S>
NodePtr<S> constant(Mat<S> v) {
  return detail::make<S>({std::move(v)});
}

template <class S>
NodePtr<S> constant(std::vector<Mat<S>> v) {
  if (v.empty()) throw InputError("constant: empty slot list");
  return detail::make<S>(std::move(v));
}

template <class S>
NodePtr<S> scalar_constant(S v) {
  Mat<S> m(1, 1);
  m(0, 0) = v;
  return constant<S>(std::move(m));
}

template <class S>
NodePtr<S> param(Mat<S> v) {
  auto n = detail::make<S>({std::move(v)});
  n->needs_grad = true;
  return n;
}

// ---------------------------------------------------------------------------
// Backward pass: iterative post-order DFS, then reverse sweep.

template <class S>
void backward(const NodePtr<S>& root) {
  if (!root->needs_grad) return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    Node<S>* n = top.first;
    if (top.second < n->parents.size()) {
      Node<S>* p = n->parents[top.second++].get();
      if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  for (auto& g : root->grad) g.setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backprop && n->has_grad()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape, or a 1x1 scalar node on the right).

template <class S>
NodePtr<S> add(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  const bool bs = detail::scalar_shaped(b) && !detail::scalar_shaped(a);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i)
    v[i] = bs ? (slot(a, i).array() + slot(b, i)(0, 0)).matrix()
              : Mat<S>(slot(a, i) + slot(b, i));
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b, bs](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      if (a->needs_grad) detail::accum(a, i, self.grad[i]);
      if (b->needs_grad) {
        if (bs) {
          Mat<S> g(1, 1);
          g(0, 0) = self.grad[i].sum();
          detail::accum(b, i, g);
        } else {
          detail::accum(b, i, self.grad[i]);
        }
      }
    }
  });
  return out;
}

template <class S>
NodePtr<S> sub(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  const bool bs = detail::scalar_shaped(b) && !detail::scalar_shaped(a);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i)
    v[i] = bs ? (slot(a, i).array() - slot(b, i)(0, 0)).matrix()
              : Mat<S>(slot(a, i) - slot(b, i));
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b, bs](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      if (a->needs_grad) detail::accum(a, i, self.grad[i]);
      if (b->needs_grad) {
        if (bs) {
          Mat<S> g(1, 1);
          g(0, 0) = -self.grad[i].sum();
          detail::accum(b, i, g);
        } else {
          detail::accum(b, i, -self.grad[i]);
        }
      }
    }
  });
  return out;
}

template <class S>
NodePtr<S> cmul(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  const bool bs = detail::scalar_shaped(b) && !detail::scalar_shaped(a);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i)
    v[i] = bs ? Mat<S>(slot(a, i) * slot(b, i)(0, 0))
              : Mat<S>((slot(a, i).array() * slot(b, i).array()).matrix());
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b, bs](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Mat<S>& g = self.grad[i];
      if (bs) {
        if (a->needs_grad) detail::accum(a, i, g * slot(b, i)(0, 0));
        if (b->needs_grad) {
          Mat<S> gb(1, 1);
          gb(0, 0) = (g.array() * slot(a, i).array()).sum();
          detail::accum(b, i, gb);
        }
      } else {
        if (a->needs_grad)
          detail::accum(a, i, (g.array() * slot(b, i).array()).matrix());
        if (b->needs_grad)
          detail::accum(b, i, (g.array() * slot(a, i).array()).matrix());
      }
    }
  });
  return out;
}

template <class S>
NodePtr<S> cdiv(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  const bool bs = detail::scalar_shaped(b) && !detail::scalar_shaped(a);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i)
    v[i] = bs ? Mat<S>(slot(a, i) / slot(b, i)(0, 0))
              : Mat<S>((slot(a, i).array() / slot(b, i).array()).matrix());
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b, bs](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Mat<S>& g = self.grad[i];
      if (bs) {
        const S s = slot(b, i)(0, 0);
        if (a->needs_grad) detail::accum(a, i, g / s);
        if (b->needs_grad) {
          Mat<S> gb(1, 1);
          gb(0, 0) = -(g.array() * slot(a, i).array()).sum() / (s * s);
          detail::accum(b, i, gb);
        }
      } else {
        if (a->needs_grad)
          detail::accum(a, i, (g.array() / slot(b, i).array()).matrix());
        if (b->needs_grad)
          detail::accum(b, i, (-(g.array() * slot(a, i).array()) /
                               (slot(b, i).array() * slot(b, i).array()))
                                  .matrix());
      }
    }
  });
  return out;
}

template <class S>
NodePtr<S> maximum(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i)
    v[i] = slot(a, i).array().max(slot(b, i).array()).matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const auto mask =
          (slot(a, i).array() >= slot(b, i).array()).template cast<S>();
      if (a->needs_grad)
        detail::accum(a, i, (self.grad[i].array() * mask).matrix());
      if (b->needs_grad)
        detail::accum(b, i, (self.grad[i].array() * (S(1) - mask)).matrix());
    }
  });
  return out;
}

template <class S>
NodePtr<S> minimum(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i)
    v[i] = slot(a, i).array().min(slot(b, i).array()).matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const auto mask =
          (slot(a, i).array() <= slot(b, i).array()).template cast<S>();
      if (a->needs_grad)
        detail::accum(a, i, (self.grad[i].array() * mask).matrix());
      if (b->needs_grad)
        detail::accum(b, i, (self.grad[i].array() * (S(1) - mask)).matrix());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <class S>
NodePtr<S> scale(Tape<S>& t, NodePtr<S> a, S c) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) v[i] = a->val[i] * c;
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a, c](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i)
      detail::accum(a, i, self.grad[i] * c);
  });
  return out;
}

template <class S>
NodePtr<S> add_scalar(Tape<S>& t, NodePtr<S> a, S c) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i)
    v[i] = (a->val[i].array() + c).matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) detail::accum(a, i, self.grad[i]);
  });
  return out;
}

template <class S>
NodePtr<S> neg(Tape<S>& t, NodePtr<S> a) {
  return scale<S>(t, std::move(a), S(-1));
}

template <class S>
NodePtr<S> exp_(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i)
    v[i] = a->val[i].array().exp().matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i)
      detail::accum(a, i,
                    (self.grad[i].array() * self.val[i].array()).matrix());
  });
  return out;
}

template <class S>
NodePtr<S> log_(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i)
    v[i] = a->val[i].array().log().matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i)
      detail::accum(a, i, (self.grad[i].array() / a->val[i].array()).matrix());
  });
  return out;
}

template <class S>
NodePtr<S> abs_(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i)
    v[i] = a->val[i].array().abs().matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i)
      detail::accum(
          a, i, (self.grad[i].array() * a->val[i].array().sign()).matrix());
  });
  return out;
}

// Gradient is passed through strictly inside (lo, hi) and zeroed at the
// clipped region.
template <class S>
NodePtr<S> clamp_(Tape<S>& t, NodePtr<S> a, S lo, S hi) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i)
    v[i] = a->val[i].array().max(lo).min(hi).matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a, lo, hi](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const auto inside =
          (a->val[i].array() > lo && a->val[i].array() < hi).template cast<S>();
      detail::accum(a, i, (self.grad[i].array() * inside).matrix());
    }
  });
  return out;
}

template <class S>
NodePtr<S> sigmoid(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i)
    v[i] = (S(1) / (S(1) + (-a->val[i].array()).exp())).matrix();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const auto y = self.val[i].array();
      detail::accum(a, i,
                    (self.grad[i].array() * y * (S(1) - y)).matrix());
    }
  });
  return out;
}

template <class S>
NodePtr<S> gelu(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i)
    v[i] = a->val[i].unaryExpr([](S x) {
      return S(0.5) * x *
             (S(1) + S(std::erf(static_cast<double>(x) * 0.7071067811865475)));
    });
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      Mat<S> d = a->val[i].unaryExpr([](S x) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
        const double pdf = 0.3989422804014327 * std::exp(-0.5 * xd * xd);
        return S(cdf + xd * pdf);
      });
      detail::accum(a, i, (self.grad[i].array() * d.array()).matrix());
    }
  });
  return out;
}

// Numerically stable elementwise binary cross-entropy against constant
// targets: softplus(x) - x*y, with targets broadcast over the batch.
template <class S>
NodePtr<S> bce_logits(Tape<S>& t, NodePtr<S> x, NodePtr<S> y) {
  using detail::slot;
  const int B = detail::out_slots(x, y);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i) {
    const auto xa = slot(x, i).array();
    const auto ya = slot(y, i).array();
    v[i] =
        (xa.max(S(0)) - xa * ya + ((-xa.abs()).exp() + S(1)).log()).matrix();
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {x, y}, [x, y](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      if (!x->needs_grad) continue;
      const auto xa = slot(x, i).array();
      const auto ya = slot(y, i).array();
      const auto sig = S(1) / (S(1) + (-xa).exp());
      detail::accum(x, i, (self.grad[i].array() * (sig - ya)).matrix());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products and layout ops.

template <class S>
NodePtr<S> matmul(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i) {
    if (slot(a, i).cols() != slot(b, i).rows())
      throw ShapeError("matmul: inner dimensions disagree");
    v[i].noalias() = slot(a, i) * slot(b, i);
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Mat<S>& g = self.grad[i];
      if (a->needs_grad) detail::accum(a, i, g * slot(b, i).transpose());
      if (b->needs_grad) detail::accum(b, i, slot(a, i).transpose() * g);
    }
  });
  return out;
}

// a * b^T, used for attention scores and similarity matrices.
template <class S>
NodePtr<S> matmul_nt(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i) {
    if (slot(a, i).cols() != slot(b, i).cols())
      throw ShapeError("matmul_nt: inner dimensions disagree");
    v[i].noalias() = slot(a, i) * slot(b, i).transpose();
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Mat<S>& g = self.grad[i];
      if (a->needs_grad) detail::accum(a, i, g * slot(b, i));
      if (b->needs_grad) detail::accum(b, i, g.transpose() * slot(a, i));
    }
  });
  return out;
}

template <class S>
NodePtr<S> transpose(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) v[i] = a->val[i].transpose();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i)
      detail::accum(a, i, self.grad[i].transpose());
  });
  return out;
}

template <class S>
NodePtr<S> concat_rows(Tape<S>& t, NodePtr<S> a, NodePtr<S> b) {
  using detail::slot;
  const int B = detail::out_slots(a, b);
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i) {
    if (slot(a, i).cols() != slot(b, i).cols())
      throw ShapeError("concat_rows: column counts disagree");
    Mat<S> m(slot(a, i).rows() + slot(b, i).rows(), slot(a, i).cols());
    m << slot(a, i), slot(b, i);
    v[i] = std::move(m);
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a, b}, [a, b](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const auto ra = slot(a, i).rows();
      if (a->needs_grad) detail::accum(a, i, self.grad[i].topRows(ra));
      if (b->needs_grad)
        detail::accum(b, i, self.grad[i].bottomRows(self.grad[i].rows() - ra));
    }
  });
  return out;
}

template <class S>
NodePtr<S> concat_cols(Tape<S>& t, const std::vector<NodePtr<S>>& parts) {
  if (parts.empty()) throw InputError("concat_cols: no parts");
  int B = 1;
  for (const auto& p : parts) B = std::max(B, p->slots());
  std::vector<Mat<S>> v(B);
  for (int i = 0; i < B; ++i) {
    Eigen::Index rows = detail::slot(parts[0], i).rows(), cols = 0;
    for (const auto& p : parts) cols += detail::slot(p, i).cols();
    Mat<S> m(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      const Mat<S>& pm = detail::slot(p, i);
      if (pm.rows() != rows)
        throw ShapeError("concat_cols: row counts disagree");
      m.middleCols(c, pm.cols()) = pm;
      c += pm.cols();
    }
    v[i] = std::move(m);
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, parts, [parts](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      Eigen::Index c = 0;
      for (const auto& p : parts) {
        const Eigen::Index w = detail::slot(p, i).cols();
        if (p->needs_grad)
          detail::accum(p, i, self.grad[i].middleCols(c, w));
        c += w;
      }
    }
  });
  return out;
}

template <class S>
NodePtr<S> slice_rows(Tape<S>& t, NodePtr<S> a, int r0, int n) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) {
    if (r0 < 0 || r0 + n > a->val[i].rows())
      throw ShapeError("slice_rows: range out of bounds");
    v[i] = a->val[i].middleRows(r0, n);
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a, r0, n](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      a->ensure_grad();
      a->grad[a->slots() == 1 ? 0 : i].middleRows(r0, n) += self.grad[i];
    }
  });
  return out;
}

template <class S>
NodePtr<S> slice_cols(Tape<S>& t, NodePtr<S> a, int c0, int n) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) {
    if (c0 < 0 || c0 + n > a->val[i].cols())
      throw ShapeError("slice_cols: range out of bounds");
    v[i] = a->val[i].middleCols(c0, n);
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a, c0, n](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      a->ensure_grad();
      a->grad[a->slots() == 1 ? 0 : i].middleCols(c0, n) += self.grad[i];
    }
  });
  return out;
}

// Adds a 1 x n row vector to every row of a.
template <class S>
NodePtr<S> add_rowvec(Tape<S>& t, NodePtr<S> a, NodePtr<S> v) {
  using detail::slot;
  const int B = detail::out_slots(a, v);
  std::vector<Mat<S>> out_v(B);
  for (int i = 0; i < B; ++i) {
    if (slot(v, i).rows() != 1 || slot(v, i).cols() != slot(a, i).cols())
      throw ShapeError("add_rowvec: expected 1 x cols(a) vector");
    out_v[i] = slot(a, i).rowwise() + slot(v, i).row(0);
  }
  auto out = detail::make<S>(std::move(out_v));
  detail::attach<S>(t, out, {a, v}, [a, v](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      if (a->needs_grad) detail::accum(a, i, self.grad[i]);
      if (v->needs_grad)
        detail::accum(v, i, self.grad[i].colwise().sum().matrix());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions.

template <class S>
NodePtr<S> sum_all(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) {
    v[i].resize(1, 1);
    v[i](0, 0) = a->val[i].sum();
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i)
      detail::accum(a, i,
                    Mat<S>::Constant(a->val[i].rows(), a->val[i].cols(),
                                     self.grad[i](0, 0)));
  });
  return out;
}

template <class S>
NodePtr<S> mean_all(Tape<S>& t, NodePtr<S> a) {
  auto s = sum_all(t, a);
  return scale<S>(t, s, S(1) / S(a->val[0].size()));
}

template <class S>
NodePtr<S> rowsum(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) v[i] = a->val[i].rowwise().sum();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Eigen::Index n = a->val[i].cols();
      detail::accum(a, i, self.grad[i] * Mat<S>::Ones(1, n));
    }
  });
  return out;
}

// Column-wise mean: m x n -> 1 x n.
template <class S>
NodePtr<S> mean_rows(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) v[i] = a->val[i].colwise().mean();
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Eigen::Index m = a->val[i].rows();
      detail::accum(a, i,
                    Mat<S>::Constant(m, 1, S(1) / S(m)) * self.grad[i]);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Row-wise normalizations.

template <class S>
NodePtr<S> softmax_rows(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) {
    Mat<S> e = (a->val[i].colwise() - a->val[i].rowwise().maxCoeff())
                   .array()
                   .exp()
                   .matrix();
    v[i] = (e.array().colwise() / e.rowwise().sum().array()).matrix();
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Mat<S>& y = self.val[i];
      const Mat<S>& g = self.grad[i];
      Mat<S> dot = (g.array() * y.array()).rowwise().sum().matrix();
      detail::accum(
          a, i,
          (y.array() * (g.array().colwise() - dot.col(0).array())).matrix());
    }
  });
  return out;
}

template <class S>
NodePtr<S> log_softmax_rows(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) {
    Mat<S> shifted = a->val[i].colwise() - a->val[i].rowwise().maxCoeff();
    Mat<S> lse = shifted.array().exp().rowwise().sum().log().matrix();
    v[i] = (shifted.array().colwise() - lse.col(0).array()).matrix();
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      const Mat<S> p = self.val[i].array().exp().matrix();
      const Mat<S>& g = self.grad[i];
      Mat<S> gsum = g.rowwise().sum();
      detail::accum(
          a, i,
          (g.array() - p.array().colwise() * gsum.col(0).array()).matrix());
    }
  });
  return out;
}

template <class S>
NodePtr<S> l2_normalize_rows(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  std::vector<Mat<S>> norms(a->slots());
  for (int i = 0; i < a->slots(); ++i) {
    Mat<S> n = a->val[i].rowwise().norm();
    if ((n.array() < S(1e-12)).any())
      throw InputError("l2_normalize_rows: zero row");
    v[i] = (a->val[i].array().colwise() / n.col(0).array()).matrix();
    norms[i] = std::move(n);
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(
      t, out, {a}, [a, norms = std::move(norms)](Node<S>& self) {
        for (int i = 0; i < self.slots(); ++i) {
          const Mat<S>& y = self.val[i];
          const Mat<S>& g = self.grad[i];
          Mat<S> dot = (g.array() * y.array()).rowwise().sum().matrix();
          detail::accum(
              a, i,
              ((g.array() - y.array().colwise() * dot.col(0).array())
                   .colwise() /
               norms[i].col(0).array())
                  .matrix());
        }
      });
  return out;
}

// Row-wise LayerNorm with learnable gain/bias (1 x n each).
template <class S>
NodePtr<S> layer_norm(Tape<S>& t, NodePtr<S> x, NodePtr<S> gamma,
                      NodePtr<S> beta, S eps = S(1e-5)) {
  const int B = x->slots();
  std::vector<Mat<S>> v(B), xhat(B), inv_std(B);
  for (int i = 0; i < B; ++i) {
    const Mat<S>& m = x->val[i];
    const Eigen::Index n = m.cols();
    Mat<S> mu = m.rowwise().mean();
    Mat<S> centered = m.colwise() - mu.col(0);
    Mat<S> var = (centered.array().square().rowwise().sum() / S(n)).matrix();
    inv_std[i] = (var.array() + eps).rsqrt().matrix();
    xhat[i] = (centered.array().colwise() * inv_std[i].col(0).array()).matrix();
    v[i] = ((xhat[i].array().rowwise() * gamma->val[0].row(0).array())
                .rowwise() +
            beta->val[0].row(0).array())
               .matrix();
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(
      t, out, {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<S>& self) {
        for (int i = 0; i < self.slots(); ++i) {
          const Mat<S>& g = self.grad[i];
          const Mat<S>& xh = xhat[i];
          if (gamma->needs_grad)
            detail::accum(gamma, i,
                          (g.array() * xh.array()).colwise().sum().matrix());
          if (beta->needs_grad)
            detail::accum(beta, i, g.colwise().sum().matrix());
          if (x->needs_grad) {
            const Eigen::Index n = xh.cols();
            Mat<S> dxh =
                (g.array().rowwise() * gamma->val[0].row(0).array()).matrix();
            Mat<S> m1 = dxh.rowwise().mean();
            Mat<S> m2 =
                ((dxh.array() * xh.array()).rowwise().sum() / S(n)).matrix();
            detail::accum(
                x, i,
                (((dxh.array().colwise() - m1.col(0).array()) -
                  xh.array().colwise() * m2.col(0).array())
                     .colwise() *
                 inv_std[i].col(0).array())
                    .matrix());
          }
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Gather / batch-layout ops.

// Gathers embedding rows per batch slot: table is V x d, ids[b] selects the
// rows of slot b.
template <class S>
NodePtr<S> embedding(Tape<S>& t, NodePtr<S> table,
                     const std::vector<std::vector<int>>& ids) {
  if (ids.empty()) throw InputError("embedding: empty batch");
  const Eigen::Index V = table->val[0].rows();
  std::vector<Mat<S>> v(ids.size());
  for (size_t b = 0; b < ids.size(); ++b) {
    Mat<S> m(static_cast<Eigen::Index>(ids[b].size()), table->val[0].cols());
    for (size_t p = 0; p < ids[b].size(); ++p) {
      const int id = ids[b][p];
      if (id < 0 || id >= V) throw InputError("embedding: id out of range");
      m.row(static_cast<Eigen::Index>(p)) = table->val[0].row(id);
    }
    v[b] = std::move(m);
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {table}, [table, ids](Node<S>& self) {
    table->ensure_grad();
    for (int b = 0; b < self.slots(); ++b)
      for (size_t p = 0; p < ids[static_cast<size_t>(b)].size(); ++p)
        table->grad[0].row(ids[static_cast<size_t>(b)][p]) +=
            self.grad[b].row(static_cast<Eigen::Index>(p));
  });
  return out;
}

// B slots of 1 x d row vectors -> one slot holding a B x d matrix.
template <class S>
NodePtr<S> stack_batch(Tape<S>& t, NodePtr<S> a) {
  const int B = a->slots();
  const Eigen::Index d = a->val[0].cols();
  Mat<S> m(B, d);
  for (int b = 0; b < B; ++b) {
    if (a->val[b].rows() != 1 || a->val[b].cols() != d)
      throw ShapeError("stack_batch: slots must be 1 x d rows");
    m.row(b) = a->val[b].row(0);
  }
  auto out = detail::make<S>({std::move(m)});
  detail::attach<S>(t, out, {a}, [a, B](Node<S>& self) {
    for (int b = 0; b < B; ++b) detail::accum(a, b, self.grad[0].row(b));
  });
  return out;
}

// Main diagonal of an n x n matrix as n x 1.
template <class S>
NodePtr<S> diag_(Tape<S>& t, NodePtr<S> a) {
  std::vector<Mat<S>> v(a->slots());
  for (int i = 0; i < a->slots(); ++i) {
    if (a->val[i].rows() != a->val[i].cols())
      throw ShapeError("diag_: matrix not square");
    v[i] = a->val[i].diagonal();
  }
  auto out = detail::make<S>(std::move(v));
  detail::attach<S>(t, out, {a}, [a](Node<S>& self) {
    for (int i = 0; i < self.slots(); ++i) {
      a->ensure_grad();
      a->grad[a->slots() == 1 ? 0 : i].diagonal() += self.grad[i].col(0);
    }
  });
  return out;
}

// Weighted sum over batch slots of 1 x 1 values -> single 1 x 1 slot.
template <class S>
NodePtr<S> batch_weighted_sum(Tape<S>& t, NodePtr<S> a,
                              const std::vector<S>& w) {
  if (static_cast<int>(w.size()) != a->slots())
    throw ShapeError("batch_weighted_sum: weight count != slots");
  S acc = S(0);
  for (int b = 0; b < a->slots(); ++b) {
    if (a->val[b].size() != 1)
      throw ShapeError("batch_weighted_sum: slots must be scalars");
    acc += w[b] * a->val[b](0, 0);
  }
  Mat<S> m(1, 1);
  m(0, 0) = acc;
  auto out = detail::make<S>({std::move(m)});
  detail::attach<S>(t, out, {a}, [a, w](Node<S>& self) {
    const S g = self.grad[0](0, 0);
    for (int b = 0; b < a->slots(); ++b) {
      Mat<S> p(1, 1);
      p(0, 0) = w[b] * g;
      detail::accum(a, b, p);
    }
  });
  return out;
}

// Detached copy: same values, no gradient connection.
template <class S>
NodePtr<S> detach(const NodePtr<S>& a) {
  return detail::make<S>(std::vector<Mat<S>>(a->val));
}

template <class S>
double scalar_value(const NodePtr<S>& n) {
  return static_cast<double>(n->val[0](0, 0));
}

template <class S>
bool all_finite(const NodePtr<S>& n) {
  for (const auto& m : n->val)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace asap
