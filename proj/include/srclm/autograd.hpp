#pragma once

#include <cassert>
#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "srclm/common.hpp"
#include "srclm/matrix.hpp"

namespace srclm {

// Named trainable tensor. Values persist across steps; gradients accumulate
// during Tape::backward and are consumed by the optimizer.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}
};

// Reverse-mode tape over matrices. Nodes live in a deque so raw pointers stay
// stable; creation order is already a topological order, so backward() is a
// reverse sweep. Construct with grads disabled for pure inference.
class Tape {
 public:
  struct Node {
    Matrix val;
    Matrix grad;  // allocated only when needs_grad
    bool needs_grad = false;
    std::function<void()> back;
  };
  using NodeRef = Node*;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  NodeRef input(Matrix m) {
    Node& n = fresh();
    n.val = std::move(m);
    return &n;
  }

  NodeRef param(Param& p) {
    Node& n = fresh();
    n.val = p.value;
    if (grad_enabled_) {
      n.needs_grad = true;
      n.grad = Matrix(p.value.rows, p.value.cols);
      Param* pp = &p;
      Node* np = &n;
      n.back = [pp, np]() {
        for (std::size_t i = 0; i < pp->grad.size(); ++i) {
          pp->grad.a[i] += np->grad.a[i];
        }
      };
    }
    return &n;
  }

  NodeRef matmul(NodeRef a, NodeRef b) {
    Node& n = make(a->val.rows, b->val.cols, {a, b});
    mm_acc(a->val, b->val, n.val);
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, b, np]() {
        if (a->needs_grad) mm_nt_acc(np->grad, b->val, a->grad);
        if (b->needs_grad) mm_tn_acc(a->val, np->grad, b->grad);
      };
    }
    return &n;
  }

  // a * b^T without materializing the transpose (used for attention scores).
  NodeRef matmul_nt(NodeRef a, NodeRef b) {
    Node& n = make(a->val.rows, b->val.rows, {a, b});
    mm_nt_acc(a->val, b->val, n.val);
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, b, np]() {
        if (a->needs_grad) mm_acc(np->grad, b->val, a->grad);
        if (b->needs_grad) mm_tn_acc(np->grad, a->val, b->grad);
      };
    }
    return &n;
  }

  NodeRef add(NodeRef a, NodeRef b) {
    assert(a->val.rows == b->val.rows && a->val.cols == b->val.cols);
    Node& n = make(a->val.rows, a->val.cols, {a, b});
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      n.val.a[i] = a->val.a[i] + b->val.a[i];
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, b, np]() {
        if (a->needs_grad) axpy(a->grad, np->grad);
        if (b->needs_grad) axpy(b->grad, np->grad);
      };
    }
    return &n;
  }

  // Broadcasts a 1 x cols row vector over every row of a.
  NodeRef add_rowvec(NodeRef a, NodeRef bias) {
    assert(bias->val.rows == 1 && bias->val.cols == a->val.cols);
    Node& n = make(a->val.rows, a->val.cols, {a, bias});
    for (int r = 0; r < a->val.rows; ++r) {
      const double* ar = a->val.row(r);
      double* nr = n.val.row(r);
      for (int c = 0; c < a->val.cols; ++c) nr[c] = ar[c] + bias->val.a[c];
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, bias, np]() {
        if (a->needs_grad) axpy(a->grad, np->grad);
        if (bias->needs_grad) {
          for (int r = 0; r < np->grad.rows; ++r) {
            const double* gr = np->grad.row(r);
            for (int c = 0; c < np->grad.cols; ++c) bias->grad.a[c] += gr[c];
          }
        }
      };
    }
    return &n;
  }

  NodeRef scale(NodeRef a, double s) {
    Node& n = make(a->val.rows, a->val.cols, {a});
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val.a[i] = a->val.a[i] * s;
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, s, np]() {
        if (!a->needs_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
          a->grad.a[i] += s * np->grad.a[i];
        }
      };
    }
    return &n;
  }

  NodeRef hadamard(NodeRef a, NodeRef b) {
    assert(a->val.rows == b->val.rows && a->val.cols == b->val.cols);
    Node& n = make(a->val.rows, a->val.cols, {a, b});
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      n.val.a[i] = a->val.a[i] * b->val.a[i];
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, b, np]() {
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
          if (a->needs_grad) a->grad.a[i] += b->val.a[i] * np->grad.a[i];
          if (b->needs_grad) b->grad.a[i] += a->val.a[i] * np->grad.a[i];
        }
      };
    }
    return &n;
  }

  NodeRef slice_cols(NodeRef a, int c0, int c1) {
    Node& n = make(a->val.rows, c1 - c0, {a});
    for (int r = 0; r < a->val.rows; ++r) {
      const double* ar = a->val.row(r);
      double* nr = n.val.row(r);
      for (int c = c0; c < c1; ++c) nr[c - c0] = ar[c];
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, c0, np]() {
        if (!a->needs_grad) return;
        for (int r = 0; r < np->grad.rows; ++r) {
          const double* gr = np->grad.row(r);
          double* ar = a->grad.row(r);
          for (int c = 0; c < np->grad.cols; ++c) ar[c0 + c] += gr[c];
        }
      };
    }
    return &n;
  }

  NodeRef slice_rows(NodeRef a, int r0, int r1) {
    Node& n = make(r1 - r0, a->val.cols, {a});
    for (int r = r0; r < r1; ++r) {
      const double* ar = a->val.row(r);
      double* nr = n.val.row(r - r0);
      for (int c = 0; c < a->val.cols; ++c) nr[c] = ar[c];
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [a, r0, np]() {
        if (!a->needs_grad) return;
        for (int r = 0; r < np->grad.rows; ++r) {
          const double* gr = np->grad.row(r);
          double* ar = a->grad.row(r0 + r);
          for (int c = 0; c < np->grad.cols; ++c) ar[c] += gr[c];
        }
      };
    }
    return &n;
  }

  NodeRef concat_cols(const std::vector<NodeRef>& parts) {
    int cols = 0;
    for (NodeRef p : parts) cols += p->val.cols;
    Node& n = make(parts[0]->val.rows, cols, parts);
    int off = 0;
    for (NodeRef p : parts) {
      for (int r = 0; r < p->val.rows; ++r) {
        const double* pr = p->val.row(r);
        double* nr = n.val.row(r);
        for (int c = 0; c < p->val.cols; ++c) nr[off + c] = pr[c];
      }
      off += p->val.cols;
    }
    if (n.needs_grad) {
      Node* np = &n;
      std::vector<NodeRef> ps = parts;
      n.back = [ps, np]() {
        int off = 0;
        for (NodeRef p : ps) {
          if (p->needs_grad) {
            for (int r = 0; r < p->grad.rows; ++r) {
              const double* gr = np->grad.row(r);
              double* pr = p->grad.row(r);
              for (int c = 0; c < p->grad.cols; ++c) pr[c] += gr[off + c];
            }
          }
          off += p->val.cols;
        }
      };
    }
    return &n;
  }

  NodeRef concat_rows(const std::vector<NodeRef>& parts) {
    int rows = 0;
    for (NodeRef p : parts) rows += p->val.rows;
    Node& n = make(rows, parts[0]->val.cols, parts);
    int off = 0;
    for (NodeRef p : parts) {
      for (int r = 0; r < p->val.rows; ++r) {
        const double* pr = p->val.row(r);
        double* nr = n.val.row(off + r);
        for (int c = 0; c < p->val.cols; ++c) nr[c] = pr[c];
      }
      off += p->val.rows;
    }
    if (n.needs_grad) {
      Node* np = &n;
      std::vector<NodeRef> ps = parts;
      n.back = [ps, np]() {
        int off = 0;
        for (NodeRef p : ps) {
          if (p->needs_grad) {
            for (int r = 0; r < p->grad.rows; ++r) {
              const double* gr = np->grad.row(off + r);
              double* pr = p->grad.row(r);
              for (int c = 0; c < p->grad.cols; ++c) pr[c] += gr[c];
            }
          }
          off += p->val.rows;
        }
      };
    }
    return &n;
  }

  // Embedding lookup: one output row per id.
  NodeRef gather_rows(NodeRef table, std::vector<int> ids) {
    Node& n = make(static_cast<int>(ids.size()), table->val.cols, {table});
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const double* src = table->val.row(ids[t]);
      double* dst = n.val.row(static_cast<int>(t));
      for (int c = 0; c < table->val.cols; ++c) dst[c] = src[c];
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [table, ids = std::move(ids), np]() {
        if (!table->needs_grad) return;
        for (std::size_t t = 0; t < ids.size(); ++t) {
          const double* gr = np->grad.row(static_cast<int>(t));
          double* dst = table->grad.row(ids[t]);
          for (int c = 0; c < np->grad.cols; ++c) dst[c] += gr[c];
        }
      };
    }
    return &n;
  }

  // Row-wise layer normalization with learned gain and bias (each 1 x cols).
  NodeRef layer_norm(NodeRef x, NodeRef gain, NodeRef bias,
                     double eps = 1e-12) {
    const int rows = x->val.rows, cols = x->val.cols;
    Node& n = make(rows, cols, {x, gain, bias});
    Matrix xhat(rows, cols);
    std::vector<double> inv_sigma(rows);
    for (int r = 0; r < rows; ++r) {
      const double* xr = x->val.row(r);
      double mu = 0.0;
      for (int c = 0; c < cols; ++c) mu += xr[c];
      mu /= cols;
      double var = 0.0;
      for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= cols;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_sigma[r] = is;
      double* hr = xhat.row(r);
      double* nr = n.val.row(r);
      for (int c = 0; c < cols; ++c) {
        hr[c] = (xr[c] - mu) * is;
        nr[c] = gain->val.a[c] * hr[c] + bias->val.a[c];
      }
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [x, gain, bias, np, xhat = std::move(xhat),
                inv_sigma = std::move(inv_sigma)]() {
        const int rows = np->grad.rows, cols = np->grad.cols;
        for (int r = 0; r < rows; ++r) {
          const double* gy = np->grad.row(r);
          const double* hr = xhat.row(r);
          if (gain->needs_grad || bias->needs_grad) {
            for (int c = 0; c < cols; ++c) {
              if (gain->needs_grad) gain->grad.a[c] += gy[c] * hr[c];
              if (bias->needs_grad) bias->grad.a[c] += gy[c];
            }
          }
          if (!x->needs_grad) continue;
          // dxhat = gy * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) / sigma
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (int c = 0; c < cols; ++c) {
            const double dh = gy[c] * gain->val.a[c];
            mean_dh += dh;
            mean_dh_h += dh * hr[c];
          }
          mean_dh /= cols;
          mean_dh_h /= cols;
          double* gx = x->grad.row(r);
          for (int c = 0; c < cols; ++c) {
            const double dh = gy[c] * gain->val.a[c];
            gx[c] += (dh - mean_dh - hr[c] * mean_dh_h) * inv_sigma[r];
          }
        }
      };
    }
    return &n;
  }

  NodeRef softmax_rows(NodeRef x) {
    const int rows = x->val.rows, cols = x->val.cols;
    Node& n = make(rows, cols, {x});
    for (int r = 0; r < rows; ++r) {
      const double* xr = x->val.row(r);
      double* nr = n.val.row(r);
      double mx = xr[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
      double z = 0.0;
      for (int c = 0; c < cols; ++c) {
        nr[c] = std::exp(xr[c] - mx);
        z += nr[c];
      }
      for (int c = 0; c < cols; ++c) nr[c] /= z;
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [x, np]() {
        if (!x->needs_grad) return;
        const int rows = np->grad.rows, cols = np->grad.cols;
        for (int r = 0; r < rows; ++r) {
          const double* y = np->val.row(r);
          const double* gy = np->grad.row(r);
          double dot = 0.0;
          for (int c = 0; c < cols; ++c) dot += gy[c] * y[c];
          double* gx = x->grad.row(r);
          for (int c = 0; c < cols; ++c) gx[c] += (gy[c] - dot) * y[c];
        }
      };
    }
    return &n;
  }

  // Exact GELU, x * Phi(x).
  NodeRef gelu(NodeRef x) {
    Node& n = make(x->val.rows, x->val.cols, {x});
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      const double v = x->val.a[i];
      n.val.a[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [x, np]() {
        if (!x->needs_grad) return;
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
          const double v = x->val.a[i];
          const double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
          x->grad.a[i] += (phi + v * pdf) * np->grad.a[i];
        }
      };
    }
    return &n;
  }

  NodeRef tanh_of(NodeRef x) {
    Node& n = make(x->val.rows, x->val.cols, {x});
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      n.val.a[i] = std::tanh(x->val.a[i]);
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [x, np]() {
        if (!x->needs_grad) return;
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
          const double y = np->val.a[i];
          x->grad.a[i] += (1.0 - y * y) * np->grad.a[i];
        }
      };
    }
    return &n;
  }

  NodeRef sigmoid_of(NodeRef x) {
    Node& n = make(x->val.rows, x->val.cols, {x});
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      const double v = x->val.a[i];
      n.val.a[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                          : std::exp(v) / (1.0 + std::exp(v));
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [x, np]() {
        if (!x->needs_grad) return;
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
          const double y = np->val.a[i];
          x->grad.a[i] += y * (1.0 - y) * np->grad.a[i];
        }
      };
    }
    return &n;
  }

  // Inverted dropout; identity when rate is zero.
  NodeRef dropout(NodeRef x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    Node& n = make(x->val.rows, x->val.cols, {x});
    std::vector<double> mask(n.val.size());
    const double keep = 1.0 - rate;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
      n.val.a[i] = x->val.a[i] * mask[i];
    }
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [x, np, mask = std::move(mask)]() {
        if (!x->needs_grad) return;
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
          x->grad.a[i] += mask[i] * np->grad.a[i];
        }
      };
    }
    return &n;
  }

  // Sum of cross-entropy, -log softmax(logits[p])[target[p]], over the given
  // positions. Numerically fused; caller divides by the position count.
  NodeRef ce_sum(NodeRef logits, const std::vector<int>& targets,
                 const std::vector<std::size_t>& positions) {
    if (positions.empty()) {
      throw std::invalid_argument("ce_sum: no positions selected");
    }
    const int cols = logits->val.cols;
    Node& n = make(1, 1, {logits});
    Matrix probs(static_cast<int>(positions.size()), cols);
    double total = 0.0;
    for (std::size_t k = 0; k < positions.size(); ++k) {
      const std::size_t p = positions[k];
      const double* lr = logits->val.row(static_cast<int>(p));
      double mx = lr[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, lr[c]);
      double z = 0.0;
      double* pr = probs.row(static_cast<int>(k));
      for (int c = 0; c < cols; ++c) {
        pr[c] = std::exp(lr[c] - mx);
        z += pr[c];
      }
      for (int c = 0; c < cols; ++c) pr[c] /= z;
      total += -(lr[targets[p]] - mx - std::log(z));
    }
    n.val.at(0, 0) = total;
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [logits, targets, positions, np, probs = std::move(probs)]() {
        if (!logits->needs_grad) return;
        const double g = np->grad.at(0, 0);
        const int cols = logits->grad.cols;
        for (std::size_t k = 0; k < positions.size(); ++k) {
          const std::size_t p = positions[k];
          const double* pr = probs.row(static_cast<int>(k));
          double* gr = logits->grad.row(static_cast<int>(p));
          for (int c = 0; c < cols; ++c) gr[c] += g * pr[c];
          gr[targets[p]] -= g;
        }
      };
    }
    return &n;
  }

  // Binary cross entropy on a single logit, stable for large |z|.
  NodeRef bce_logit(NodeRef z, double target) {
    assert(z->val.rows == 1 && z->val.cols == 1);
    Node& n = make(1, 1, {z});
    const double v = z->val.at(0, 0);
    n.val.at(0, 0) =
        std::max(v, 0.0) - v * target + std::log1p(std::exp(-std::abs(v)));
    if (n.needs_grad) {
      Node* np = &n;
      n.back = [z, target, np]() {
        if (!z->needs_grad) return;
        const double v = z->val.at(0, 0);
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                : std::exp(v) / (1.0 + std::exp(v));
        z->grad.at(0, 0) += (s - target) * np->grad.at(0, 0);
      };
    }
    return &n;
  }

  // Runs reverse accumulation from a scalar loss node.
  void backward(NodeRef loss) {
    if (!grad_enabled_) {
      throw std::logic_error("backward on a no-grad tape");
    }
    assert(loss->val.rows == 1 && loss->val.cols == 1);
    loss->grad.at(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->needs_grad && it->back) it->back();
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_;

  Node& fresh() {
    nodes_.emplace_back();
    return nodes_.back();
  }

  Node& make(int rows, int cols, const std::vector<NodeRef>& parents) {
    Node& n = fresh();
    n.val = Matrix(rows, cols);
    if (grad_enabled_) {
      for (NodeRef p : parents) {
        if (p->needs_grad) {
          n.needs_grad = true;
          break;
        }
      }
      if (n.needs_grad) n.grad = Matrix(rows, cols);
    }
    return n;
  }

  static void axpy(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.a[i] += src.a[i];
  }
};

using NodeRef = Tape::NodeRef;

}  // namespace srclm
