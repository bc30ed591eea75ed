#pragma once

#include "fedsdwc/common.hpp"

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace fedsdwc::ad {

// Reverse-mode tape over dense Eigen matrices. A Graph owns the nodes of one
// loss evaluation; Var is a cheap handle into it. Ops record a backward
// closure only when some input requires gradients, so constant subgraphs
// (e.g. evaluation-time forwards) carry no tape overhead beyond the values.
class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : g_(g), id_(id) {}

  const Mat& value() const;
  const Mat& grad() const;
  bool requires_grad() const;
  int id() const { return id_; }
  Graph* graph() const { return g_; }
  bool valid() const { return g_ != nullptr; }

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  struct Node {
    Mat value;
    Mat grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Graph&, int)> backward;  // (graph, own id)
  };

  Var constant(Mat v) { return push(std::move(v), false, nullptr); }
  Var leaf(Mat v) { return push(std::move(v), true, nullptr); }

  Var push(Mat v, bool requires_grad, std::function<void(Graph&, int)> bw) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Mat& grad_of(int id) {
    Node& n = node(id);
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Seeds d(loss)/d(loss) = 1 and propagates through the tape in reverse
  // creation order (a valid topological order by construction).
  void backward(const Var& loss) {
    if (loss.value().size() != 1)
      throw ShapeError("backward: loss must be a 1x1 matrix");
    grad_of(loss.id())(0, 0) = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return g_->node(id_).value; }
inline const Mat& Var::grad() const { return g_->node(id_).grad; }
inline bool Var::requires_grad() const { return g_->node(id_).requires_grad; }

namespace detail {
inline void accumulate(Graph& g, int id, const Mat& delta) {
  if (g.node(id).requires_grad) g.grad_of(id) += delta;
}
}  // namespace detail

inline Var detach(const Var& a) { return a.graph()->constant(a.value()); }

inline Var add(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  return g.push(a.value() + b.value(), rg,
                rg ? [ia, ib](Graph& g, int self) {
                  detail::accumulate(g, ia, g.node(self).grad);
                  detail::accumulate(g, ib, g.node(self).grad);
                } : std::function<void(Graph&, int)>());
}

inline Var sub(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  return g.push(a.value() - b.value(), rg,
                rg ? [ia, ib](Graph& g, int self) {
                  detail::accumulate(g, ia, g.node(self).grad);
                  detail::accumulate(g, ib, -g.node(self).grad);
                } : std::function<void(Graph&, int)>());
}

inline Var neg(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(-a.value(), rg,
                rg ? [ia](Graph& g, int self) {
                  detail::accumulate(g, ia, -g.node(self).grad);
                } : std::function<void(Graph&, int)>());
}

inline Var mul(const Var& a, const Var& b) {  // elementwise
  Graph& g = *a.graph();
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mul: shape mismatch");
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  return g.push(a.value().cwiseProduct(b.value()), rg,
                rg ? [ia, ib](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  detail::accumulate(g, ia, d.cwiseProduct(g.node(ib).value));
                  detail::accumulate(g, ib, d.cwiseProduct(g.node(ia).value));
                } : std::function<void(Graph&, int)>());
}

inline Var div(const Var& a, const Var& b) {  // elementwise
  Graph& g = *a.graph();
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  return g.push(a.value().cwiseQuotient(b.value()), rg,
                rg ? [ia, ib](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  const Mat& bv = g.node(ib).value;
                  detail::accumulate(g, ia, d.cwiseQuotient(bv));
                  detail::accumulate(
                      g, ib,
                      -d.cwiseProduct(g.node(ia).value).cwiseQuotient(bv.cwiseProduct(bv)));
                } : std::function<void(Graph&, int)>());
}

inline Var scale(const Var& a, double k) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(a.value() * k, rg,
                rg ? [ia, k](Graph& g, int self) {
                  detail::accumulate(g, ia, g.node(self).grad * k);
                } : std::function<void(Graph&, int)>());
}

inline Var add_scalar(const Var& a, double k) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(Mat((a.value().array() + k).matrix()), rg,
                rg ? [ia](Graph& g, int self) {
                  detail::accumulate(g, ia, g.node(self).grad);
                } : std::function<void(Graph&, int)>());
}

inline Var matmul(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  return g.push(a.value() * b.value(), rg,
                rg ? [ia, ib](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  detail::accumulate(g, ia, d * g.node(ib).value.transpose());
                  detail::accumulate(g, ib, g.node(ia).value.transpose() * d);
                } : std::function<void(Graph&, int)>());
}

// X (r x c) plus column vector b (r x 1) broadcast across columns.
inline Var add_col_broadcast(const Var& x, const Var& b) {
  Graph& g = *x.graph();
  if (x.rows() != b.rows() || b.cols() != 1)
    throw ShapeError("add_col_broadcast: bias must be (rows x 1)");
  bool rg = x.requires_grad() || b.requires_grad();
  int ix = x.id(), ib = b.id();
  return g.push(x.value().colwise() + Vec(b.value().col(0)), rg,
                rg ? [ix, ib](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  detail::accumulate(g, ix, d);
                  detail::accumulate(g, ib, d.rowwise().sum());
                } : std::function<void(Graph&, int)>());
}

// X (r x c) elementwise times row vector w (1 x c) broadcast across rows.
inline Var mul_row_broadcast(const Var& x, const Var& w) {
  Graph& g = *x.graph();
  if (x.cols() != w.cols() || w.rows() != 1)
    throw ShapeError("mul_row_broadcast: weight must be (1 x cols)");
  bool rg = x.requires_grad() || w.requires_grad();
  int ix = x.id(), iw = w.id();
  Mat out = (x.value().array().rowwise() * w.value().row(0).array()).matrix();
  return g.push(std::move(out), rg,
                rg ? [ix, iw](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  const Mat& xv = g.node(ix).value;
                  const Mat& wv = g.node(iw).value;
                  detail::accumulate(g, ix, d.array().rowwise() * wv.row(0).array());
                  detail::accumulate(g, iw, d.cwiseProduct(xv).colwise().sum());
                } : std::function<void(Graph&, int)>());
}

inline Var vcat(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  if (a.cols() != b.cols()) throw ShapeError("vcat: column count mismatch");
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  Mat out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  Eigen::Index ra = a.rows(), rb = b.rows();
  return g.push(std::move(out), rg,
                rg ? [ia, ib, ra, rb](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  detail::accumulate(g, ia, d.topRows(ra));
                  detail::accumulate(g, ib, d.bottomRows(rb));
                } : std::function<void(Graph&, int)>());
}

inline Var rows(const Var& a, Eigen::Index start, Eigen::Index n) {
  Graph& g = *a.graph();
  if (start < 0 || n < 0 || start + n > a.rows()) throw ShapeError("rows: out of range");
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(a.value().middleRows(start, n), rg,
                rg ? [ia, start, n](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  if (g.node(ia).requires_grad)
                    g.grad_of(ia).middleRows(start, n) += d;
                } : std::function<void(Graph&, int)>());
}

inline Var tanh(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  Var out = g.push(Mat(a.value().array().tanh().matrix()), rg, nullptr);
  if (rg) {
    int self_id = out.id();
    g.node(self_id).backward = [ia](Graph& g, int self) {
      const Mat& t = g.node(self).value;
      detail::accumulate(g, ia,
                         g.node(self).grad.cwiseProduct((1.0 - t.array().square()).matrix()));
    };
  }
  return out;
}

inline Var softplus(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  Mat out = a.value().unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return g.push(std::move(out), rg,
                rg ? [ia](Graph& g, int self) {
                  const Mat& x = g.node(ia).value;
                  Mat sig = x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
                  detail::accumulate(g, ia, g.node(self).grad.cwiseProduct(sig));
                } : std::function<void(Graph&, int)>());
}

inline Var exp(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  Var out = g.push(Mat(a.value().array().exp().matrix()), rg, nullptr);
  if (rg) {
    g.node(out.id()).backward = [ia](Graph& g, int self) {
      detail::accumulate(g, ia, g.node(self).grad.cwiseProduct(g.node(self).value));
    };
  }
  return out;
}

inline Var log(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(Mat(a.value().array().log().matrix()), rg,
                rg ? [ia](Graph& g, int self) {
                  detail::accumulate(g, ia,
                                     g.node(self).grad.cwiseQuotient(g.node(ia).value));
                } : std::function<void(Graph&, int)>());
}

inline Var square(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(Mat(a.value().array().square().matrix()), rg,
                rg ? [ia](Graph& g, int self) {
                  detail::accumulate(
                      g, ia, 2.0 * g.node(self).grad.cwiseProduct(g.node(ia).value));
                } : std::function<void(Graph&, int)>());
}

// Elementwise max(a, k); subgradient 0 on the clamped side.
inline Var clamp_min(const Var& a, double k) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(a.value().cwiseMax(k), rg,
                rg ? [ia, k](Graph& g, int self) {
                  const Mat& x = g.node(ia).value;
                  Mat mask = (x.array() > k).cast<double>().matrix();
                  detail::accumulate(g, ia, g.node(self).grad.cwiseProduct(mask));
                } : std::function<void(Graph&, int)>());
}

// Elementwise max(a, 0); subgradient 0 on the clamped side.
inline Var clamp_min0(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(a.value().cwiseMax(0.0), rg,
                rg ? [ia](Graph& g, int self) {
                  const Mat& x = g.node(ia).value;
                  Mat mask = (x.array() > 0.0).cast<double>().matrix();
                  detail::accumulate(g, ia, g.node(self).grad.cwiseProduct(mask));
                } : std::function<void(Graph&, int)>());
}

inline Var sum(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(std::move(out), rg,
                rg ? [ia](Graph& g, int self) {
                  double d = g.node(self).grad(0, 0);
                  const Mat& v = g.node(ia).value;
                  detail::accumulate(g, ia, Mat::Constant(v.rows(), v.cols(), d));
                } : std::function<void(Graph&, int)>());
}

inline Var colwise_sum(const Var& a) {  // (r x c) -> (1 x c)
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  return g.push(a.value().colwise().sum(), rg,
                rg ? [ia](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;  // 1 x c
                  const Mat& v = g.node(ia).value;
                  Mat delta = Mat::Ones(v.rows(), 1) * d;
                  detail::accumulate(g, ia, delta);
                } : std::function<void(Graph&, int)>());
}

inline Var mean_all(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var log_softmax_cols(const Var& a) {
  Graph& g = *a.graph();
  bool rg = a.requires_grad();
  int ia = a.id();
  const Mat& x = a.value();
  Eigen::RowVectorXd mx = x.colwise().maxCoeff();
  Mat shifted = x.rowwise() - mx;
  Eigen::RowVectorXd lse = shifted.array().exp().colwise().sum().log();
  Mat out = shifted.rowwise() - lse;
  return g.push(std::move(out), rg,
                rg ? [ia](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  const Mat& y = g.node(self).value;  // log-softmax
                  Mat soft = y.array().exp().matrix();
                  Eigen::RowVectorXd colsum = d.colwise().sum();
                  Mat delta = d - (soft.array().rowwise() * colsum.array()).matrix();
                  detail::accumulate(g, ia, delta);
                } : std::function<void(Graph&, int)>());
}

inline Var softmax_cols(const Var& a) { return exp(log_softmax_cols(a)); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }

}  // namespace fedsdwc::ad
