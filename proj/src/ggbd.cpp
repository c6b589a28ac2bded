#include "bevcal/ggbd.hpp"

#include <cmath>
#include <set>

#include "bevcal/errors.hpp"

namespace bevcal {

std::pair<Index, Index> project_to_bev(const Vec3& p, const BEVGrid& grid) {
  return {grid.cell_x(p.x()), grid.cell_y(p.y())};
}

SelectedFeatures select_features(const Tensor& positions_world, const FusedBEV& fused,
                                 const BEVGrid& grid, SelectMode mode) {
  if (positions_world.rank() != 2 || positions_world.dim(1) != 3)
    throw ConfigError("world positions must be an (N, 3) array");
  if (fused.size_x() != grid.size_x || fused.size_y() != grid.size_y)
    throw ConfigError("fused map shape does not match the grid");

  SelectedFeatures sel;
  if (mode == SelectMode::kAll) {
    sel.positions.reserve(static_cast<std::size_t>(grid.cell_count()));
    for (Index ix = 0; ix < grid.size_x; ++ix)
      for (Index iy = 0; iy < grid.size_y; ++iy) sel.positions.emplace_back(ix, iy);
  } else {
    std::set<std::pair<Index, Index>> cells;
    for (Index i = 0; i < positions_world.dim(0); ++i) {
      const Vec3 p(positions_world.at2(i, 0), positions_world.at2(i, 1),
                   positions_world.at2(i, 2));
      if (!grid.in_z_range(p.z())) continue;
      const auto cell = project_to_bev(p, grid);
      if (grid.in_bounds(cell.first, cell.second)) cells.insert(cell);
    }
    if (cells.empty())
      throw EmptySelectionError("no frustum point lands inside the BEV grid");
    sel.positions.assign(cells.begin(), cells.end());
  }

  std::vector<Index> linear;
  linear.reserve(sel.positions.size());
  for (const auto& [ix, iy] : sel.positions) linear.push_back(grid.linear_cell(ix, iy));
  const ad::Var flat =
      ad::reshape(fused.base, {fused.channels(), grid.size_x * grid.size_y});
  sel.features = ad::gather_cols(flat, std::move(linear));
  return sel;
}

Tensor sinusoidal_embedding(Index x_b, Index y_b, Index dim) {
  if (dim < 4 || dim % 4 != 0)
    throw ConfigError("positional embedding needs a dimension divisible by 4");
  Tensor e({dim});
  const Index half = dim / 2;
  const Index pos[2] = {x_b, y_b};
  for (int axis = 0; axis < 2; ++axis) {
    for (Index i = 0; i < half / 2; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
      const double angle = static_cast<double>(pos[axis]) * freq;
      e[axis * half + 2 * i] = std::sin(angle);
      e[axis * half + 2 * i + 1] = std::cos(angle);
    }
  }
  return e;
}

SelectedFeatures add_positional_embedding(const SelectedFeatures& sel, const BEVGrid& grid) {
  const Index k = sel.count();
  const Index dim = sel.features.value().dim(1);
  Tensor table({k, dim});
  for (Index i = 0; i < k; ++i) {
    const auto& [ix, iy] = sel.positions[static_cast<std::size_t>(i)];
    if (!grid.in_bounds(ix, iy))
      throw ConfigError("selected position lies outside the grid");
    const Tensor e = sinusoidal_embedding(ix, iy, dim);
    for (Index j = 0; j < dim; ++j) table.at2(i, j) = e[j];
  }
  SelectedFeatures out;
  out.positions = sel.positions;
  out.features = ad::add(sel.features, ad::Var::constant(table));
  out.embeddings = std::move(table);
  return out;
}

GgbdDecoder::GgbdDecoder(nn::ParamStore& ps, const std::string& prefix, Index dim, Rng& rng)
    : block1_(ps, prefix + ".block1", dim, 4, 2 * dim, rng),
      block2_(ps, prefix + ".block2", dim, 4, 2 * dim, rng),
      rot_head_(ps, prefix + ".rot", dim, dim, 4, rng),
      trans_head_(ps, prefix + ".trans", dim, dim, 3, rng),
      dim_(dim) {
  // Bias the raw quaternion toward identity so the head starts at a valid
  // near-unit rotation; normalizing a near-zero vector gives an arbitrary
  // direction and an ill-conditioned gradient.
  rot_head_.fc2.b.value()[0] = 1.0;
}

ad::Var GgbdDecoder::refine(const ad::Var& tokens) const {
  if (tokens.value().dim(0) < 1) throw ConfigError("refine needs at least one token");
  return block2_.forward(block1_.forward(tokens));
}

ExtrinsicPrediction GgbdDecoder::decode_heads(const ad::Var& refined) const {
  const ad::Var pooled = ad::reshape(ad::mean_rows(refined), {1, dim_});
  ExtrinsicPrediction pred;
  pred.raw_rotation = ad::reshape(rot_head_.forward(pooled), {4});
  pred.translation = ad::reshape(trans_head_.forward(pooled), {3});
  return pred;
}

Pose assemble_prediction(const ExtrinsicPrediction& pred) {
  const Tensor& r = pred.raw_rotation.value();
  const Tensor& t = pred.translation.value();
  Pose pose;
  pose.rotation = Quaternion{r[0], r[1], r[2], r[3]}.normalized().canonical();
  pose.translation = Vec3(t[0], t[1], t[2]);
  return pose;
}

}  // namespace bevcal
