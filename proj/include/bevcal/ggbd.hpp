#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bevcal/bev_fusion.hpp"
#include "bevcal/bev_grid.hpp"
#include "bevcal/geometry.hpp"
#include "bevcal/nn.hpp"

namespace bevcal {

/// BEV tokens gathered at geometry-selected cells.
struct SelectedFeatures {
  std::vector<std::pair<Index, Index>> positions;  // distinct (x_B, y_B), ascending
  ad::Var features;                                // (K, N_B), row i belongs to positions[i]
  Tensor embeddings;                               // (K, N_B) once attached, else empty

  Index count() const { return static_cast<Index>(positions.size()); }
};

/// Raw regression output; rotation kept unnormalized for the norm penalty.
struct ExtrinsicPrediction {
  ad::Var raw_rotation;  // (4) as (w, x, y, z)
  ad::Var translation;   // (3) meters
};

enum class SelectMode { kGeometry, kAll };

/// Footprint cell of a world point; z is ignored. Floor semantics, so the
/// result may lie outside [0,X)x[0,Y) and the caller decides whether to drop.
std::pair<Index, Index> project_to_bev(const Vec3& p, const BEVGrid& grid);

/// Geometry mode keeps the distinct footprint cells hit by in-grid frustum
/// points (points outside the footprint or the height slab are dropped);
/// all mode keeps every grid cell. Features are gathered from the fused map.
SelectedFeatures select_features(const Tensor& positions_world, const FusedBEV& fused,
                                 const BEVGrid& grid, SelectMode mode);

/// Fixed sinusoidal cell embedding: first half encodes x_B, second half y_B.
/// Every cell's embedding has the same L2 norm, sqrt(dim / 2).
Tensor sinusoidal_embedding(Index x_b, Index y_b, Index dim);

/// Adds the cell embedding of each position to its feature row.
SelectedFeatures add_positional_embedding(const SelectedFeatures& sel, const BEVGrid& grid);

/// Self-attention refinement plus the two regression heads.
class GgbdDecoder {
 public:
  GgbdDecoder() = default;
  GgbdDecoder(nn::ParamStore& ps, const std::string& prefix, Index dim, Rng& rng);

  /// (K, dim) token sequence in, same shape out; permutation-equivariant.
  ad::Var refine(const ad::Var& tokens) const;

  /// Mean-pools the sequence, then two separate MLP heads.
  ExtrinsicPrediction decode_heads(const ad::Var& refined) const;

  Index dim() const { return dim_; }

 private:
  nn::TransformerBlock block1_, block2_;
  nn::Mlp rot_head_, trans_head_;
  Index dim_ = 0;
};

/// Normalizes the raw rotation and assembles the predicted pose.
Pose assemble_prediction(const ExtrinsicPrediction& pred);

}  // namespace bevcal
