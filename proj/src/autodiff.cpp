#include "bevcal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "bevcal/errors.hpp"

namespace bevcal::ad {

namespace {

std::uint64_t next_order() {
  static std::uint64_t counter = 0;
  return ++counter;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->order = next_order();
  bool needs = false;
  for (const Var& p : parents) needs = needs || p.requires_grad();
  n->requires_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (const Var& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

// Accumulate g into the parent's grad buffer if that parent wants gradients.
bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
Tensor& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
const Tensor& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }

}  // namespace

Var Var::leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->order = next_order();
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1)
    throw Error("backward requires a defined scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node*> reachable;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    reachable.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(reachable.begin(), reachable.end(),
            [](const Node* a, const Node* b) { return a->order > b->order; });

  root.node()->grad_buffer()[0] += 1.0;
  for (Node* n : reachable) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise / reductions

Var add(const Var& a, const Var& b) {
  Tensor out = a.value();
  out.vec() += b.value().vec();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec() += self.grad.vec();
    if (wants(self, 1)) pgrad(self, 1).vec() += self.grad.vec();
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = a.value();
  out.vec() -= b.value().vec();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec() += self.grad.vec();
    if (wants(self, 1)) pgrad(self, 1).vec() -= self.grad.vec();
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = a.value();
  out.vec().array() *= b.value().vec().array();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0))
      pgrad(self, 0).vec().array() += self.grad.vec().array() * pval(self, 1).vec().array();
    if (wants(self, 1))
      pgrad(self, 1).vec().array() += self.grad.vec().array() * pval(self, 0).vec().array();
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out.vec() *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec() += s * self.grad.vec();
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  out.vec().array() += s;
  return make_op(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec() += self.grad.vec();
  });
}

Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a.value().vec().sum());
  return make_op(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec().array() += self.grad[0];
  });
}

Var mean_all(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  Tensor out = Tensor::scalar(a.value().vec().sum() / n);
  return make_op(std::move(out), {a}, [n](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec().array() += self.grad[0] / n;
  });
}

Var gelu(const Var& a) {
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = a.value();
  for (Index i = 0; i < out.size(); ++i) {
    const double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return make_op(std::move(out), {a}, [](Node& self) {
    if (!wants(self, 0)) return;
    const Tensor& x = pval(self, 0);
    Tensor& g = pgrad(self, 0);
    for (Index i = 0; i < x.size(); ++i) {
      const double xi = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
      g[i] += self.grad[i] * (cdf + xi * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// shape / indexing

Var reshape(const Var& a, std::vector<Index> shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec() += self.grad.vec();
  });
}

Var concat0(const Var& a, const Var& b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  std::vector<Index> shape = ta.shape();
  shape[0] += tb.shape()[0];
  Tensor out(shape);
  std::copy(ta.data(), ta.data() + ta.size(), out.data());
  std::copy(tb.data(), tb.data() + tb.size(), out.data() + ta.size());
  const Index na = ta.size();
  return make_op(std::move(out), {a, b}, [na](Node& self) {
    if (wants(self, 0)) {
      Tensor& g = pgrad(self, 0);
      g.vec() += Eigen::Map<const Eigen::VectorXd>(self.grad.data(), na);
    }
    if (wants(self, 1)) {
      Tensor& g = pgrad(self, 1);
      g.vec() += Eigen::Map<const Eigen::VectorXd>(self.grad.data() + na, g.size());
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  const Index m = parts.front().value().dim(0);
  std::vector<Index> widths;
  Index total = 0;
  for (const Var& p : parts) {
    widths.push_back(p.value().dim(1));
    total += widths.back();
  }
  Tensor out({m, total});
  Index off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    const Index w = widths[i];
    for (Index r = 0; r < m; ++r)
      std::copy(t.data() + r * w, t.data() + (r + 1) * w, out.data() + r * total + off);
    off += w;
  }
  return make_op(std::move(out), parts, [m, total, widths = std::move(widths)](Node& self) {
    Index off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const Index w = widths[i];
      if (wants(self, i)) {
        Tensor& g = pgrad(self, i);
        for (Index r = 0; r < m; ++r)
          for (Index j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + off + j];
      }
      off += w;
    }
  });
}

Var slice_cols(const Var& a, Index c0, Index c1) {
  const Tensor& x = a.value();
  const Index m = x.dim(0), n = x.dim(1), w = c1 - c0;
  Tensor out({m, w});
  for (Index i = 0; i < m; ++i)
    std::copy(x.data() + i * n + c0, x.data() + i * n + c1, out.data() + i * w);
  return make_op(std::move(out), {a}, [m, n, w, c0](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < w; ++j) g[i * n + c0 + j] += self.grad[i * w + j];
  });
}

Var gather_rows(const Var& x, std::vector<Index> idx) {
  const Tensor& t = x.value();
  const Index c = t.dim(1), m = static_cast<Index>(idx.size());
  Tensor out({m, c});
  for (Index i = 0; i < m; ++i)
    std::copy(t.data() + idx[static_cast<std::size_t>(i)] * c,
              t.data() + (idx[static_cast<std::size_t>(i)] + 1) * c, out.data() + i * c);
  return make_op(std::move(out), {x}, [idx = std::move(idx), c](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (Index j = 0; j < c; ++j)
        g[idx[i] * c + j] += self.grad[static_cast<Index>(i) * c + j];
  });
}

Var gather_cols(const Var& x, std::vector<Index> idx) {
  const Tensor& t = x.value();
  const Index c = t.dim(0), n = t.dim(1), m = static_cast<Index>(idx.size());
  Tensor out({m, c});
  for (Index i = 0; i < m; ++i)
    for (Index ch = 0; ch < c; ++ch) out[i * c + ch] = t[ch * n + idx[static_cast<std::size_t>(i)]];
  return make_op(std::move(out), {x}, [idx = std::move(idx), c, n](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (Index ch = 0; ch < c; ++ch)
        g[ch * n + idx[i]] += self.grad[static_cast<Index>(i) * c + ch];
  });
}

Var scatter_cols(const Var& x, std::vector<Index> idx, Index n_cols) {
  const Tensor& t = x.value();
  const Index m = t.dim(0), c = t.dim(1);
  Tensor out({c, n_cols});
  for (Index i = 0; i < m; ++i)
    for (Index ch = 0; ch < c; ++ch)
      out[ch * n_cols + idx[static_cast<std::size_t>(i)]] += t[i * c + ch];
  return make_op(std::move(out), {x}, [idx = std::move(idx), c, n_cols](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (Index ch = 0; ch < c; ++ch)
        g[static_cast<Index>(i) * c + ch] += self.grad[ch * n_cols + idx[i]];
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  const Index m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  out.mat().noalias() = ta.mat() * tb.mat();
  return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
    Tensor::ConstMatMap g(self.grad.data(), m, n);
    if (wants(self, 0))
      pgrad(self, 0).mat(m, k).noalias() += g * pval(self, 1).mat(k, n).transpose();
    if (wants(self, 1))
      pgrad(self, 1).mat(k, n).noalias() += pval(self, 0).mat(m, k).transpose() * g;
  });
}

Var transpose(const Var& a) {
  const Tensor& t = a.value();
  const Index m = t.dim(0), n = t.dim(1);
  Tensor out({n, m});
  out.mat() = t.mat().transpose();
  return make_op(std::move(out), {a}, [m, n](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).mat(m, n) += self.grad.mat(n, m).transpose();
  });
}

Var add_rowvec(const Var& x, const Var& b) {
  const Tensor& t = x.value();
  const Index m = t.dim(0), c = t.dim(1);
  Tensor out = t;
  for (Index i = 0; i < m; ++i)
    Eigen::Map<Eigen::VectorXd>(out.data() + i * c, c) += b.value().vec();
  return make_op(std::move(out), {x, b}, [m, c](Node& self) {
    if (wants(self, 0)) pgrad(self, 0).vec() += self.grad.vec();
    if (wants(self, 1)) {
      Tensor& g = pgrad(self, 1);
      for (Index i = 0; i < m; ++i)
        g.vec() += Eigen::Map<const Eigen::VectorXd>(self.grad.data() + i * c, c);
    }
  });
}

Var mean_rows(const Var& x) {
  const Tensor& t = x.value();
  const Index m = t.dim(0), c = t.dim(1);
  Tensor out({c});
  out.vec() = t.mat().colwise().mean().transpose();
  return make_op(std::move(out), {x}, [m, c](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    const double inv = 1.0 / static_cast<double>(m);
    for (Index i = 0; i < m; ++i)
      Eigen::Map<Eigen::VectorXd>(g.data() + i * c, c) += inv * self.grad.vec();
  });
}

namespace {
void softmax_rows_value(const Tensor& x, Tensor& out) {
  const Index m = x.dim(0), n = x.dim(1);
  for (Index i = 0; i < m; ++i) {
    Eigen::Map<const Eigen::ArrayXd> row(x.data() + i * n, n);
    Eigen::Map<Eigen::ArrayXd> orow(out.data() + i * n, n);
    const double mx = row.maxCoeff();
    orow = (row - mx).exp();
    orow /= orow.sum();
  }
}
}  // namespace

Var softmax_rows(const Var& x) {
  Tensor out(x.value().shape());
  softmax_rows_value(x.value(), out);
  return make_op(std::move(out), {x}, [](Node& self) {
    if (!wants(self, 0)) return;
    const Index m = self.value.dim(0), n = self.value.dim(1);
    Tensor& g = pgrad(self, 0);
    for (Index i = 0; i < m; ++i) {
      Eigen::Map<const Eigen::ArrayXd> y(self.value.data() + i * n, n);
      Eigen::Map<const Eigen::ArrayXd> gy(self.grad.data() + i * n, n);
      const double dot = (gy * y).sum();
      Eigen::Map<Eigen::ArrayXd>(g.data() + i * n, n) += (gy - dot) * y;
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& t = x.value();
  const Index m = t.dim(0), c = t.dim(1);
  Tensor out({m, c});
  Tensor xhat({m, c});
  Tensor inv_std({m});
  for (Index i = 0; i < m; ++i) {
    Eigen::Map<const Eigen::ArrayXd> row(t.data() + i * c, c);
    const double mu = row.mean();
    const double var = (row - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    Eigen::Map<Eigen::ArrayXd> xh(xhat.data() + i * c, c);
    xh = (row - mu) * is;
    Eigen::Map<Eigen::ArrayXd>(out.data() + i * c, c) =
        xh * gamma.value().vec().array() + beta.value().vec().array();
  }
  auto ctx_xhat = std::make_shared<Tensor>(std::move(xhat));
  auto ctx_istd = std::make_shared<Tensor>(std::move(inv_std));
  return make_op(std::move(out), {x, gamma, beta}, [m, c, ctx_xhat, ctx_istd](Node& self) {
    const double cn = static_cast<double>(c);
    for (Index i = 0; i < m; ++i) {
      Eigen::Map<const Eigen::ArrayXd> gy(self.grad.data() + i * c, c);
      Eigen::Map<const Eigen::ArrayXd> xh(ctx_xhat->data() + i * c, c);
      if (wants(self, 0)) {
        Eigen::ArrayXd dxhat = gy * pval(self, 1).vec().array();
        const double s1 = dxhat.sum();
        const double s2 = (dxhat * xh).sum();
        Eigen::Map<Eigen::ArrayXd>(pgrad(self, 0).data() + i * c, c) +=
            (*ctx_istd)[i] * (dxhat - s1 / cn - xh * (s2 / cn));
      }
      if (wants(self, 1)) pgrad(self, 1).vec().array() += gy * xh;
      if (wants(self, 2)) pgrad(self, 2).vec().array() += gy;
    }
  });
}

Var attention_head(const Var& q, const Var& k, const Var& v) {
  const Index m = q.value().dim(0), d = q.value().dim(1);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor scores({m, m});
  scores.mat().noalias() = q.value().mat() * k.value().mat().transpose() * s;
  Tensor probs({m, m});
  softmax_rows_value(scores, probs);
  Tensor out({m, d});
  out.mat().noalias() = probs.mat() * v.value().mat();
  // Probabilities are recomputed in backward to keep peak memory flat when
  // the token count is large (selector ablation mode).
  return make_op(std::move(out), {q, k, v}, [m, d, s](Node& self) {
    const Tensor& qv = pval(self, 0);
    const Tensor& kv = pval(self, 1);
    const Tensor& vv = pval(self, 2);
    Tensor scores({m, m});
    scores.mat().noalias() = qv.mat() * kv.mat().transpose() * s;
    Tensor probs({m, m});
    softmax_rows_value(scores, probs);
    Tensor::ConstMatMap g(self.grad.data(), m, d);
    if (wants(self, 2)) pgrad(self, 2).mat(m, d).noalias() += probs.mat().transpose() * g;
    // dS = P ⊙ (dP − rowwise(dP·P)); reuse the scores buffer for dS.
    Tensor dp({m, m});
    dp.mat().noalias() = g * vv.mat().transpose();
    for (Index i = 0; i < m; ++i) {
      Eigen::Map<const Eigen::ArrayXd> prow(probs.data() + i * m, m);
      Eigen::Map<const Eigen::ArrayXd> dprow(dp.data() + i * m, m);
      const double dot = (prow * dprow).sum();
      Eigen::Map<Eigen::ArrayXd>(scores.data() + i * m, m) = (dprow - dot) * prow;
    }
    if (wants(self, 0)) pgrad(self, 0).mat(m, d).noalias() += scores.mat() * kv.mat() * s;
    if (wants(self, 1))
      pgrad(self, 1).mat(m, d).noalias() += scores.mat().transpose() * qv.mat() * s;
  });
}

// ---------------------------------------------------------------------------
// convolution

namespace {

struct Conv2dDims {
  Index cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
};

void im2col2d(const Tensor& x, const Conv2dDims& d, Tensor& col) {
  // col: (cin*kh*kw, ho*wo)
  const Index cols = d.ho * d.wo;
  for (Index c = 0; c < d.cin; ++c)
    for (Index ki = 0; ki < d.kh; ++ki)
      for (Index kj = 0; kj < d.kw; ++kj) {
        double* dst = col.data() + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (Index oh = 0; oh < d.ho; ++oh) {
          const Index ih = oh * d.stride - d.pad + ki;
          for (Index ow = 0; ow < d.wo; ++ow) {
            const Index iw = ow * d.stride - d.pad + kj;
            dst[oh * d.wo + ow] = (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w)
                                      ? x[(c * d.h + ih) * d.w + iw]
                                      : 0.0;
          }
        }
      }
}

void col2im2d(const Tensor& col, const Conv2dDims& d, Tensor& gx) {
  const Index cols = d.ho * d.wo;
  for (Index c = 0; c < d.cin; ++c)
    for (Index ki = 0; ki < d.kh; ++ki)
      for (Index kj = 0; kj < d.kw; ++kj) {
        const double* src = col.data() + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (Index oh = 0; oh < d.ho; ++oh) {
          const Index ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) continue;
          for (Index ow = 0; ow < d.wo; ++ow) {
            const Index iw = ow * d.stride - d.pad + kj;
            if (iw >= 0 && iw < d.w) gx[(c * d.h + ih) * d.w + iw] += src[oh * d.wo + ow];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& tx = x.value();
  const Tensor& tw = w.value();
  Conv2dDims d;
  d.cin = tx.dim(0);
  d.h = tx.dim(1);
  d.w = tx.dim(2);
  d.cout = tw.dim(0);
  d.kh = tw.dim(2);
  d.kw = tw.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (tw.dim(1) != d.cin) throw Error("conv2d: channel mismatch");

  const Index krows = d.cin * d.kh * d.kw;
  auto col = std::make_shared<Tensor>(Tensor({krows, d.ho * d.wo}));
  im2col2d(tx, d, *col);
  Tensor out({d.cout, d.ho, d.wo});
  out.mat(d.cout, d.ho * d.wo).noalias() = tw.mat(d.cout, krows) * col->mat();
  for (Index c = 0; c < d.cout; ++c)
    Eigen::Map<Eigen::ArrayXd>(out.data() + c * d.ho * d.wo, d.ho * d.wo) += b.value()[c];

  return make_op(std::move(out), {x, w, b}, [d, krows, col](Node& self) {
    Tensor::ConstMatMap g(self.grad.data(), d.cout, d.ho * d.wo);
    if (wants(self, 1)) pgrad(self, 1).mat(d.cout, krows).noalias() += g * col->mat().transpose();
    if (wants(self, 2)) {
      Tensor& gb = pgrad(self, 2);
      for (Index c = 0; c < d.cout; ++c) gb[c] += g.row(c).sum();
    }
    if (wants(self, 0)) {
      Tensor gcol({krows, d.ho * d.wo});
      gcol.mat().noalias() = pval(self, 1).mat(d.cout, krows).transpose() * g;
      col2im2d(gcol, d, pgrad(self, 0));
    }
  });
}

namespace {

struct Conv3dDims {
  Index cin, dz, h, w, cout, kd, kh, kw;
  int pad;
};

void im2col3d(const Tensor& x, const Conv3dDims& d, Tensor& col) {
  const Index cols = d.dz * d.h * d.w;
  Index r = 0;
  for (Index c = 0; c < d.cin; ++c)
    for (Index kz = 0; kz < d.kd; ++kz)
      for (Index ki = 0; ki < d.kh; ++ki)
        for (Index kj = 0; kj < d.kw; ++kj, ++r) {
          double* dst = col.data() + r * cols;
          for (Index oz = 0; oz < d.dz; ++oz) {
            const Index iz = oz - d.pad + kz;
            for (Index oh = 0; oh < d.h; ++oh) {
              const Index ih = oh - d.pad + ki;
              for (Index ow = 0; ow < d.w; ++ow) {
                const Index iw = ow - d.pad + kj;
                dst[(oz * d.h + oh) * d.w + ow] =
                    (iz >= 0 && iz < d.dz && ih >= 0 && ih < d.h && iw >= 0 && iw < d.w)
                        ? x[((c * d.dz + iz) * d.h + ih) * d.w + iw]
                        : 0.0;
              }
            }
          }
        }
}

void col2im3d(const Tensor& col, const Conv3dDims& d, Tensor& gx) {
  const Index cols = d.dz * d.h * d.w;
  Index r = 0;
  for (Index c = 0; c < d.cin; ++c)
    for (Index kz = 0; kz < d.kd; ++kz)
      for (Index ki = 0; ki < d.kh; ++ki)
        for (Index kj = 0; kj < d.kw; ++kj, ++r) {
          const double* src = col.data() + r * cols;
          for (Index oz = 0; oz < d.dz; ++oz) {
            const Index iz = oz - d.pad + kz;
            if (iz < 0 || iz >= d.dz) continue;
            for (Index oh = 0; oh < d.h; ++oh) {
              const Index ih = oh - d.pad + ki;
              if (ih < 0 || ih >= d.h) continue;
              for (Index ow = 0; ow < d.w; ++ow) {
                const Index iw = ow - d.pad + kj;
                if (iw >= 0 && iw < d.w)
                  gx[((c * d.dz + iz) * d.h + ih) * d.w + iw] += src[(oz * d.h + oh) * d.w + ow];
              }
            }
          }
        }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, int pad) {
  const Tensor& tx = x.value();
  const Tensor& tw = w.value();
  Conv3dDims d;
  d.cin = tx.dim(0);
  d.dz = tx.dim(1);
  d.h = tx.dim(2);
  d.w = tx.dim(3);
  d.cout = tw.dim(0);
  d.kd = tw.dim(2);
  d.kh = tw.dim(3);
  d.kw = tw.dim(4);
  d.pad = pad;
  if (tw.dim(1) != d.cin) throw Error("conv3d: channel mismatch");
  if (d.kd != 2 * pad + 1 || d.kh != 2 * pad + 1 || d.kw != 2 * pad + 1)
    throw Error("conv3d: kernel must preserve spatial shape");

  const Index krows = d.cin * d.kd * d.kh * d.kw;
  const Index cols = d.dz * d.h * d.w;
  auto col = std::make_shared<Tensor>(Tensor({krows, cols}));
  im2col3d(tx, d, *col);
  Tensor out({d.cout, d.dz, d.h, d.w});
  out.mat(d.cout, cols).noalias() = tw.mat(d.cout, krows) * col->mat();
  for (Index c = 0; c < d.cout; ++c)
    Eigen::Map<Eigen::ArrayXd>(out.data() + c * cols, cols) += b.value()[c];

  return make_op(std::move(out), {x, w, b}, [d, krows, cols, col](Node& self) {
    Tensor::ConstMatMap g(self.grad.data(), d.cout, cols);
    if (wants(self, 1)) pgrad(self, 1).mat(d.cout, krows).noalias() += g * col->mat().transpose();
    if (wants(self, 2)) {
      Tensor& gb = pgrad(self, 2);
      for (Index c = 0; c < d.cout; ++c) gb[c] += g.row(c).sum();
    }
    if (wants(self, 0)) {
      Tensor gcol({krows, cols});
      gcol.mat().noalias() = pval(self, 1).mat(d.cout, krows).transpose() * g;
      col2im3d(gcol, d, pgrad(self, 0));
    }
  });
}

Var upsample2_nearest(const Var& x) {
  const Tensor& t = x.value();
  const Index c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const double v = t[(ch * h + i) * w + j];
        const Index base = (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
        out[base] = v;
        out[base + 1] = v;
        out[base + 2 * w] = v;
        out[base + 2 * w + 1] = v;
      }
  return make_op(std::move(out), {x}, [c, h, w](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
          const Index base = (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
          g[(ch * h + i) * w + j] +=
              self.grad[base] + self.grad[base + 1] + self.grad[base + 2 * w] +
              self.grad[base + 2 * w + 1];
        }
  });
}

// ---------------------------------------------------------------------------
// pipeline-specific fused ops

Var frustum_outer(const Var& w, const Var& f) {
  const Tensor& tw = w.value();  // (D, P)
  const Tensor& tf = f.value();  // (C, P)
  const Index nd = tw.dim(0), p = tw.dim(1), c = tf.dim(0);
  Tensor out({nd, c, p});
  for (Index di = 0; di < nd; ++di)
    for (Index ci = 0; ci < c; ++ci)
      for (Index pi = 0; pi < p; ++pi)
        out[(di * c + ci) * p + pi] = tw[di * p + pi] * tf[ci * p + pi];
  return make_op(std::move(out), {w, f}, [nd, p, c](Node& self) {
    const Tensor& tw = pval(self, 0);
    const Tensor& tf = pval(self, 1);
    for (Index di = 0; di < nd; ++di)
      for (Index ci = 0; ci < c; ++ci)
        for (Index pi = 0; pi < p; ++pi) {
          const double g = self.grad[(di * c + ci) * p + pi];
          if (wants(self, 0)) pgrad(self, 0)[di * p + pi] += g * tf[ci * p + pi];
          if (wants(self, 1)) pgrad(self, 1)[ci * p + pi] += g * tw[di * p + pi];
        }
  });
}

Var bev_scatter(const Var& fr, std::vector<Index> cells, Index n_cells) {
  const Tensor& t = fr.value();  // (D, C, P)
  const Index nd = t.dim(0), c = t.dim(1), p = t.dim(2);
  Tensor out({c, n_cells});
  for (Index di = 0; di < nd; ++di)
    for (Index pi = 0; pi < p; ++pi) {
      const Index cell = cells[static_cast<std::size_t>(di * p + pi)];
      if (cell < 0) continue;
      for (Index ci = 0; ci < c; ++ci)
        out[ci * n_cells + cell] += t[(di * c + ci) * p + pi];
    }
  return make_op(std::move(out), {fr},
                 [cells = std::move(cells), nd, c, p, n_cells](Node& self) {
                   if (!wants(self, 0)) return;
                   Tensor& g = pgrad(self, 0);
                   for (Index di = 0; di < nd; ++di)
                     for (Index pi = 0; pi < p; ++pi) {
                       const Index cell = cells[static_cast<std::size_t>(di * p + pi)];
                       if (cell < 0) continue;
                       for (Index ci = 0; ci < c; ++ci)
                         g[(di * c + ci) * p + pi] += self.grad[ci * n_cells + cell];
                     }
                 });
}

// ---------------------------------------------------------------------------
// pose / loss primitives

Var l2_normalize(const Var& v) {
  const double n = v.value().vec().norm();
  if (n <= 0.0) throw InvalidRotationError("cannot normalize a zero-norm vector");
  Tensor out = v.value();
  out.vec() /= n;
  return make_op(std::move(out), {v}, [n](Node& self) {
    if (!wants(self, 0)) return;
    const Eigen::VectorXd y = self.value.vec();
    const double dot = self.grad.vec().dot(y);
    pgrad(self, 0).vec() += (self.grad.vec() - dot * y) / n;
  });
}

Var norm2(const Var& v) {
  const double n = v.value().vec().norm();
  Tensor out = Tensor::scalar(n);
  return make_op(std::move(out), {v}, [n](Node& self) {
    if (!wants(self, 0) || n == 0.0) return;
    pgrad(self, 0).vec() += (self.grad[0] / n) * pval(self, 0).vec();
  });
}

Var geodesic_angle(const Var& q) {
  const Tensor& t = q.value();
  const double w = t[0];
  const double y = std::sqrt(t[1] * t[1] + t[2] * t[2] + t[3] * t[3]);
  const double x = std::abs(w);
  Tensor out = Tensor::scalar(2.0 * std::atan2(y, x));
  return make_op(std::move(out), {q}, [y, x, w](Node& self) {
    if (!wants(self, 0)) return;
    const double denom = x * x + y * y;
    if (denom == 0.0) return;
    Tensor& g = pgrad(self, 0);
    const double go = self.grad[0];
    const double sgn = w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0);
    g[0] += go * (-2.0 * y * sgn / denom);
    if (y > 0.0) {
      const Tensor& t = pval(self, 0);
      const double k = go * 2.0 * x / (denom * y);
      g[1] += k * t[1];
      g[2] += k * t[2];
      g[3] += k * t[3];
    }
  });
}

Var smooth_l1_mean(const Var& x, const Tensor& target, double beta) {
  const Tensor& t = x.value();
  const Index n = t.size();
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = std::abs(t[i] - target[i]);
    acc += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  return make_op(std::move(out), {x}, [target, beta, n](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    const double go = self.grad[0] / static_cast<double>(n);
    const Tensor& t = pval(self, 0);
    for (Index i = 0; i < n; ++i) {
      const double d = t[i] - target[i];
      const double slope = std::abs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : -1.0);
      g[i] += go * slope;
    }
  });
}

Var quat_rotmat(const Var& q) {
  const Tensor& t = q.value();
  const double w = t[0], x = t[1], y = t[2], z = t[3];
  Tensor out({3, 3});
  out[0] = 1 - 2 * (y * y + z * z);
  out[1] = 2 * (x * y - w * z);
  out[2] = 2 * (x * z + w * y);
  out[3] = 2 * (x * y + w * z);
  out[4] = 1 - 2 * (x * x + z * z);
  out[5] = 2 * (y * z - w * x);
  out[6] = 2 * (x * z - w * y);
  out[7] = 2 * (y * z + w * x);
  out[8] = 1 - 2 * (x * x + y * y);
  return make_op(std::move(out), {q}, [](Node& self) {
    if (!wants(self, 0)) return;
    const Tensor& t = pval(self, 0);
    const double w = t[0], x = t[1], y = t[2], z = t[3];
    const Tensor& g = self.grad;
    Tensor& gq = pgrad(self, 0);
    gq[0] += 2 * (-z * g[1] + y * g[2] + z * g[3] - x * g[5] - y * g[6] + x * g[7]);
    gq[1] += 2 * (y * g[1] + z * g[2] + y * g[3] - 2 * x * g[4] - w * g[5] + z * g[6] +
                  w * g[7] - 2 * x * g[8]);
    gq[2] += 2 * (-2 * y * g[0] + x * g[1] + w * g[2] + x * g[3] + z * g[5] - w * g[6] +
                  z * g[7] - 2 * y * g[8]);
    gq[3] += 2 * (-2 * z * g[0] - w * g[1] + x * g[2] + w * g[3] - 2 * z * g[4] + y * g[5] +
                  x * g[6] + y * g[7]);
  });
}

Var sub_colvec_from_const(const Tensor& base, const Var& t) {
  const Index n = base.dim(1);
  Tensor out = base;
  for (Index i = 0; i < 3; ++i)
    Eigen::Map<Eigen::ArrayXd>(out.data() + i * n, n) -= t.value()[i];
  return make_op(std::move(out), {t}, [n](Node& self) {
    if (!wants(self, 0)) return;
    Tensor& g = pgrad(self, 0);
    for (Index i = 0; i < 3; ++i)
      g[i] -= Eigen::Map<const Eigen::ArrayXd>(self.grad.data() + i * n, n).sum();
  });
}

Var colwise_norm_mean(const Var& y) {
  const Tensor& t = y.value();  // (3, N)
  const Index n = t.dim(1);
  double acc = 0.0;
  for (Index j = 0; j < n; ++j) {
    acc += std::sqrt(t[j] * t[j] + t[n + j] * t[n + j] + t[2 * n + j] * t[2 * n + j]);
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  return make_op(std::move(out), {y}, [n](Node& self) {
    if (!wants(self, 0)) return;
    const Tensor& t = pval(self, 0);
    Tensor& g = pgrad(self, 0);
    const double go = self.grad[0] / static_cast<double>(n);
    for (Index j = 0; j < n; ++j) {
      const double nj =
          std::sqrt(t[j] * t[j] + t[n + j] * t[n + j] + t[2 * n + j] * t[2 * n + j]);
      if (nj == 0.0) continue;
      g[j] += go * t[j] / nj;
      g[n + j] += go * t[n + j] / nj;
      g[2 * n + j] += go * t[2 * n + j] / nj;
    }
  });
}

}  // namespace bevcal::ad
