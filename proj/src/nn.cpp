#include "bevcal/nn.hpp"

#include <cmath>

#include "bevcal/errors.hpp"

namespace bevcal::nn {

Var ParamStore::create(const std::string& name, std::vector<Index> shape, double bound,
                       Rng& rng) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  Var v = Var::leaf(std::move(t), true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::create_filled(const std::string& name, std::vector<Index> shape, double val) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Var v = Var::leaf(Tensor::full(std::move(shape), val), true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter name: " + name);
  return entries_[it->second].second;
}

Index ParamStore::scalar_count() const {
  Index n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : entries_) {
    Var var = v;
    var.zero_grad();
  }
}

Linear::Linear(ParamStore& ps, const std::string& prefix, Index in, Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w = ps.create(prefix + ".w", {in, out}, bound, rng);
  b = ps.create_filled(prefix + ".b", {out}, 0.0);
}

Var Linear::forward(const Var& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, Index dim) {
  gamma = ps.create_filled(prefix + ".gamma", {dim}, 1.0);
  beta = ps.create_filled(prefix + ".beta", {dim}, 0.0);
}

Var LayerNorm::forward(const Var& x) const { return ad::layer_norm(x, gamma, beta); }

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, Index in, Index out, int k,
               int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  w = ps.create(prefix + ".w", {out, in, k, k}, bound, rng);
  b = ps.create_filled(prefix + ".b", {out}, 0.0);
}

Var Conv2d::forward(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }

Conv3d::Conv3d(ParamStore& ps, const std::string& prefix, Index in, Index out, int k,
               Rng& rng) {
  if (k % 2 == 0) throw ConfigError("conv3d kernel size must be odd");
  pad = k / 2;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k * k));
  w = ps.create(prefix + ".w", {out, in, k, k, k}, bound, rng);
  b = ps.create_filled(prefix + ".b", {out}, 0.0);
}

Var Conv3d::forward(const Var& x) const { return ad::conv3d(x, w, b, pad); }

Mlp::Mlp(ParamStore& ps, const std::string& prefix, Index in, Index hidden, Index out,
         Rng& rng)
    : fc1(ps, prefix + ".fc1", in, hidden, rng), fc2(ps, prefix + ".fc2", hidden, out, rng) {}

Var Mlp::forward(const Var& x) const { return fc2.forward(ad::gelu(fc1.forward(x))); }

MultiHeadSelfAttention::MultiHeadSelfAttention(ParamStore& ps, const std::string& prefix,
                                               Index dim_, int heads_, Rng& rng)
    : heads(heads_), dim(dim_) {
  if (dim % heads != 0) throw ConfigError("attention dim must divide evenly into heads");
  wq = Linear(ps, prefix + ".wq", dim, dim, rng);
  wk = Linear(ps, prefix + ".wk", dim, dim, rng);
  wv = Linear(ps, prefix + ".wv", dim, dim, rng);
  wo = Linear(ps, prefix + ".wo", dim, dim, rng);
}

Var MultiHeadSelfAttention::forward(const Var& x) const {
  const Var q = wq.forward(x);
  const Var k = wk.forward(x);
  const Var v = wv.forward(x);
  const Index hd = dim / heads;
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Index c0 = h * hd, c1 = (h + 1) * hd;
    outs.push_back(ad::attention_head(ad::slice_cols(q, c0, c1), ad::slice_cols(k, c0, c1),
                                      ad::slice_cols(v, c0, c1)));
  }
  return wo.forward(ad::concat_cols(outs));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& prefix, Index dim,
                                   int heads, Index ffn_dim, Rng& rng)
    : ln1(ps, prefix + ".ln1", dim),
      ln2(ps, prefix + ".ln2", dim),
      attn(ps, prefix + ".attn", dim, heads, rng),
      ffn(ps, prefix + ".ffn", dim, ffn_dim, dim, rng) {}

Var TransformerBlock::forward(const Var& x) const {
  Var h = ad::add(x, attn.forward(ln1.forward(x)));
  return ad::add(h, ffn.forward(ln2.forward(h)));
}

AdamW::AdamW(ParamStore& store, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : store_(&store), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (const auto& [name, v] : store.entries()) {
    m_.push_back(Tensor::zeros(v.value().shape()));
    v_.push_back(Tensor::zeros(v.value().shape()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& entries = store_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var p = entries[i].second;
    Tensor& val = p.value();
    const Tensor& g = p.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (Index j = 0; j < val.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      val[j] -= lr_ * weight_decay_ * val[j];
      val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamW::restore_state(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t) {
  const auto& entries = store_->entries();
  if (m.size() != entries.size() || v.size() != entries.size()) {
    throw ConfigError("optimizer state holds " + std::to_string(m.size()) +
                      " buffers for a store of " + std::to_string(entries.size()) +
                      " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (m[i].size() != entries[i].second.value().size() ||
        v[i].size() != entries[i].second.value().size()) {
      throw ConfigError("optimizer state shape mismatch at parameter '" + entries[i].first + "'");
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

double StepLR::lr_for_epoch(int epoch) const {
  return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

}  // namespace bevcal::nn
