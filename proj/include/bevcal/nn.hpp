#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bevcal/autodiff.hpp"
#include "bevcal/rng.hpp"

namespace bevcal::nn {

using ad::Var;

/// Ordered registry of trainable leaves. Creation order is the canonical
/// order for optimizer state and checkpoint layout, so module construction
/// must be deterministic.
class ParamStore {
 public:
  Var create(const std::string& name, std::vector<Index> shape, double bound, Rng& rng);
  Var create_filled(const std::string& name, std::vector<Index> shape, double v);

  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Index scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Linear {
  Var w;  // (in, out)
  Var b;  // (out)

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, Index in, Index out, Rng& rng);
  Var forward(const Var& x) const;  // (M, in) -> (M, out)
};

struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, Index dim);
  Var forward(const Var& x) const;
};

struct Conv2d {
  Var w;  // (out, in, k, k)
  Var b;  // (out)
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& prefix, Index in, Index out, int k, int stride,
         int pad, Rng& rng);
  Var forward(const Var& x) const;  // (in, H, W) -> (out, H', W')
};

struct Conv3d {
  Var w;  // (out, in, k, k, k)
  Var b;  // (out)
  int pad = 0;

  Conv3d() = default;
  Conv3d(ParamStore& ps, const std::string& prefix, Index in, Index out, int k, Rng& rng);
  Var forward(const Var& x) const;  // (in, D, H, W) -> (out, D, H, W)
};

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& prefix, Index in, Index hidden, Index out, Rng& rng);
  Var forward(const Var& x) const;
};

struct MultiHeadSelfAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  Index dim = 0;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamStore& ps, const std::string& prefix, Index dim, int heads,
                         Rng& rng);
  Var forward(const Var& x) const;  // (M, dim) -> (M, dim)
};

/// Pre-norm residual block: x + MHSA(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadSelfAttention attn;
  Mlp ffn;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, const std::string& prefix, Index dim, int heads,
                   Index ffn_dim, Rng& rng);
  Var forward(const Var& x) const;
};

/// AdamW with decoupled weight decay over every entry of a ParamStore.
class AdamW {
 public:
  AdamW(ParamStore& store, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();
  void zero_grad() { store_->zero_grad(); }

  // Checkpoint plumbing. Buffers are ordered like the store's entries.
  std::int64_t steps() const { return t_; }
  const std::vector<Tensor>& moment1() const { return m_; }
  const std::vector<Tensor>& moment2() const { return v_; }
  void restore_state(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t);

 private:
  ParamStore* store_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Multiplies the base learning rate by `gamma` every `step_size` epochs.
struct StepLR {
  double base_lr = 1e-3;
  int step_size = 1;
  double gamma = 0.5;

  double lr_for_epoch(int epoch) const;
};

}  // namespace bevcal::nn
