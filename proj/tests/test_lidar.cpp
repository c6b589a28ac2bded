#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bevcal/errors.hpp"
#include "bevcal/lidar_branch.hpp"

using namespace bevcal;
using ad::Var;

namespace {

BEVGrid toy_grid() {
  BEVGrid g;
  g.cell_size = 0.1;
  g.size_x = 16;
  g.size_y = 16;
  g.height_bins = 4;
  g.range = 9.0;
  g.z_min = -0.2;
  g.z_max = 0.6;
  return g;
}

PointCloud random_cloud(Rng& rng, int n, double spread) {
  PointCloud pc;
  for (int i = 0; i < n; ++i) {
    pc.points.emplace_back(rng.symmetric(spread), rng.symmetric(spread),
                           rng.uniform(-0.15, 0.55));
    pc.intensity.push_back(rng.uniform());
  }
  return pc;
}

}  // namespace

TEST_CASE("grid validation rejects bad extents") {
  BEVGrid g = toy_grid();
  g.size_x = 0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = toy_grid();
  g.cell_size = 0.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = toy_grid();
  g.z_min = g.z_max;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("point cloud validation") {
  PointCloud empty;
  CHECK_THROWS_AS(empty.validate(), EmptySceneError);
  PointCloud nan_pc;
  nan_pc.points.emplace_back(0.0, 0.0, std::nan(""));
  CHECK_THROWS_AS(nan_pc.validate(), MalformedFileError);
  PointCloud mismatch;
  mismatch.points.emplace_back(0, 0, 0);
  mismatch.intensity = {0.5, 0.5};
  CHECK_THROWS_AS(mismatch.validate(), MalformedFileError);
}

TEST_CASE("two nearby points share one voxel with mean features") {
  PointCloud pc;
  pc.points.emplace_back(0.05, 0.05, 0.05);
  pc.points.emplace_back(0.06, 0.04, 0.05);
  const VoxelFeature v = voxelize(pc, toy_grid(), false);
  REQUIRE(v.count() == 1);
  CHECK(v.features.value().at2(0, 0) == doctest::Approx(0.055));
  CHECK(v.features.value().at2(0, 1) == doctest::Approx(0.045));
  CHECK(v.features.value().at2(0, 2) == doctest::Approx(0.05));
}

TEST_CASE("single point at origin lands in the center cell") {
  PointCloud pc;
  pc.points.emplace_back(0.0, 0.0, 0.0);
  const BEVGrid g = toy_grid();
  const VoxelFeature v = voxelize(pc, g, false);
  REQUIRE(v.count() == 1);
  CHECK(v.keys[0][0] == g.size_x / 2);
  CHECK(v.keys[0][1] == g.size_y / 2);
  CHECK(v.keys[0][2] == g.z_bin(0.0));
}

TEST_CASE("out-of-range points are dropped; all-dropped is an error") {
  BEVGrid g = toy_grid();
  PointCloud pc;
  pc.points.emplace_back(g.range + 1.0, 0.0, 0.0);
  pc.points.emplace_back(0.0, 0.0, 0.0);
  CHECK(voxelize(pc, g, false).count() == 1);

  PointCloud far;
  far.points.emplace_back(g.range + 1.0, 0.0, 0.0);
  CHECK_THROWS_AS(voxelize(far, g, false), EmptySceneError);

  // Inside the radius but above the z range: dropped too.
  PointCloud high;
  high.points.emplace_back(0.0, 0.0, g.z_max + 0.1);
  CHECK_THROWS_AS(voxelize(high, g, false), EmptySceneError);
}

TEST_CASE("voxelize is permutation invariant and orders keys canonically") {
  Rng rng = Rng::stream(41, 1);
  PointCloud pc = random_cloud(rng, 200, 0.7);
  PointCloud shuffled = pc;
  for (std::size_t i = shuffled.points.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(shuffled.points[i - 1], shuffled.points[j]);
    std::swap(shuffled.intensity[i - 1], shuffled.intensity[j]);
  }
  const VoxelFeature a = voxelize(pc, toy_grid(), true);
  const VoxelFeature b = voxelize(shuffled, toy_grid(), true);
  REQUIRE(a.count() == b.count());
  CHECK(a.keys == b.keys);
  for (Index i = 0; i < a.features.value().size(); ++i)
    CHECK(a.features.value()[i] == doctest::Approx(b.features.value()[i]).epsilon(1e-12));

  // Canonical ordering: ascending (iz, ix, iy).
  for (std::size_t i = 1; i < a.keys.size(); ++i) {
    const auto& p = a.keys[i - 1];
    const auto& q = a.keys[i];
    CHECK(std::array<Index, 3>{p[2], p[0], p[1]} < std::array<Index, 3>{q[2], q[0], q[1]});
  }
}

TEST_CASE("intensity channel appears as the fourth feature") {
  PointCloud pc;
  pc.points.emplace_back(0.0, 0.0, 0.0);
  pc.points.emplace_back(0.01, 0.0, 0.0);
  pc.intensity = {0.2, 0.6};
  const VoxelFeature v = voxelize(pc, toy_grid(), true);
  REQUIRE(v.channels() == 4);
  CHECK(v.features.value().at2(0, 3) == doctest::Approx(0.4));
  CHECK(voxelize(pc, toy_grid(), false).channels() == 3);
}

TEST_CASE("backbone output: zero features stay zero at init") {
  Rng rng = Rng::stream(41, 2);
  nn::ParamStore ps;
  LidarBackbone bb(ps, "lidar", 3, 8, rng);
  const BEVGrid g = toy_grid();

  PointCloud pc;
  pc.points.emplace_back(0.0, 0.0, 0.0);
  pc.points.emplace_back(0.3, -0.2, 0.1);
  VoxelFeature v = voxelize(pc, g, false);
  v.features = Var::constant(Tensor::zeros(v.features.value().shape()));
  const VoxelFeature enc = bb.encode_voxels(v, g);
  CHECK(enc.count() == v.count());
  CHECK(enc.keys == v.keys);
  for (Index i = 0; i < enc.features.value().size(); ++i)
    CHECK(enc.features.value()[i] == 0.0);
}

TEST_CASE("backbone is deterministic for a fixed seed") {
  const BEVGrid g = toy_grid();
  Rng data_rng = Rng::stream(41, 3);
  const PointCloud pc = random_cloud(data_rng, 100, 0.6);

  Tensor first, second;
  for (int run = 0; run < 2; ++run) {
    Rng rng = Rng::stream(41, 4);
    nn::ParamStore ps;
    LidarBackbone bb(ps, "lidar", 4, 8, rng);
    const VoxelFeature enc = bb.encode_voxels(voxelize(pc, g, true), g);
    (run == 0 ? first : second) = enc.features.value();
  }
  REQUIRE(first.size() == second.size());
  for (Index i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("backbone gradient w.r.t. input features matches finite differences") {
  Rng rng = Rng::stream(41, 5);
  nn::ParamStore ps;
  LidarBackbone bb(ps, "lidar", 3, 4, rng);
  BEVGrid g = toy_grid();
  g.size_x = 8;
  g.size_y = 8;
  g.height_bins = 2;
  g.z_max = 0.2;

  PointCloud pc = random_cloud(rng, 40, 0.35);
  VoxelFeature v = voxelize(pc, g, false);
  Var feats = ad::Var::leaf(v.features.value(), true);
  v.features = feats;

  auto build = [&] { return ad::sum_all(bb.encode_voxels(v, g).features); };
  Var root = build();
  ad::backward(root);
  const Tensor grads = feats.grad();

  double worst = 0.0;
  const double eps = 1e-5;
  for (Index i = 0; i < feats.value().size(); ++i) {
    const double keep = feats.value()[i];
    feats.value()[i] = keep + eps;
    const double fp = build().item();
    feats.value()[i] = keep - eps;
    const double fm = build().item();
    feats.value()[i] = keep;
    const double fd = (fp - fm) / (2 * eps);
    worst = std::max(worst,
                     std::abs(grads[i] - fd) / std::max({1.0, std::abs(grads[i]), std::abs(fd)}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("flatten shape and index mapping") {
  BEVGrid g = toy_grid();
  g.size_x = 16;
  g.size_y = 16;
  g.height_bins = 4;

  VoxelFeature v;
  v.keys = {{3, 7, 2}};
  Tensor f({1, 8});
  for (Index c = 0; c < 8; ++c) f.at2(0, c) = 0.5 + static_cast<double>(c);
  v.features = Var::constant(f);

  const Var bev = flatten_to_bev(v, g);
  REQUIRE(bev.value().shape() == std::vector<Index>{32, 16, 16});

  // Nonzero only at (ix=3, iy=7) inside the channel block of slice iz=2.
  for (Index c = 0; c < 32; ++c)
    for (Index ix = 0; ix < 16; ++ix)
      for (Index iy = 0; iy < 16; ++iy) {
        const double got = bev.value().at3(c, ix, iy);
        if (ix == 3 && iy == 7 && c >= 16 && c < 24)
          CHECK(got == f.at2(0, c - 16));
        else
          CHECK(got == 0.0);
      }
}

TEST_CASE("flatten then gather back is the identity on the sparse support") {
  Rng rng = Rng::stream(41, 6);
  const BEVGrid g = toy_grid();
  const PointCloud pc = random_cloud(rng, 300, 0.7);
  const VoxelFeature v = voxelize(pc, g, true);
  const Var bev = flatten_to_bev(v, g);
  for (std::size_t i = 0; i < v.keys.size(); ++i) {
    const auto& [ix, iy, iz] = v.keys[i];
    for (Index c = 0; c < v.channels(); ++c)
      CHECK(bev.value().at3(iz * v.channels() + c, ix, iy) ==
            v.features.value().at2(static_cast<Index>(i), c));
  }
  // Total mass is conserved: every feature value appears exactly once.
  CHECK(bev.value().vec().sum() == doctest::Approx(v.features.value().vec().sum()));
}

TEST_CASE("shifting points by whole cells shifts the BEV map") {
  Rng rng = Rng::stream(41, 7);
  BEVGrid g = toy_grid();
  g.cell_size = 0.5;
  g.range = 90.0;

  PointCloud pc = random_cloud(rng, 120, 2.0);
  const Index k = 3;

  PointCloud shifted = pc;
  for (Vec3& p : shifted.points) p.x() += static_cast<double>(k) * g.cell_size;

  // Occupancy features isolate the index map from the coordinate-mean values.
  VoxelFeature a = voxelize(pc, g, false);
  a.features = Var::constant(Tensor::full({a.count(), 1}, 1.0));
  VoxelFeature b = voxelize(shifted, g, false);
  b.features = Var::constant(Tensor::full({b.count(), 1}, 1.0));
  REQUIRE(a.count() == b.count());

  const Var bev_a = flatten_to_bev(a, g);
  const Var bev_b = flatten_to_bev(b, g);
  for (Index c = 0; c < bev_a.value().dim(0); ++c)
    for (Index ix = 0; ix + k < g.size_x; ++ix)
      for (Index iy = 0; iy < g.size_y; ++iy)
        CHECK(bev_b.value().at3(c, ix + k, iy) == bev_a.value().at3(c, ix, iy));
}
