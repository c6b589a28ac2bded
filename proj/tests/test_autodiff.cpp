#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "bevcal/autodiff.hpp"
#include "bevcal/errors.hpp"
#include "bevcal/rng.hpp"

using bevcal::Index;
using bevcal::Rng;
using bevcal::Tensor;
namespace ad = bevcal::ad;
using ad::Var;

namespace {

Tensor random_tensor(std::vector<Index> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.symmetric(scale);
  return t;
}

// Central-difference comparison of every leaf gradient against the tape.
// Returns the worst relative error across all perturbed scalars.
double fd_max_rel_err(std::vector<Var> leaves, const std::function<Var()>& build,
                      double eps = 1e-5) {
  for (Var& l : leaves) l.zero_grad();
  Var root = build();
  ad::backward(root);

  std::vector<Tensor> grads;
  for (Var& l : leaves)
    grads.push_back(l.grad().empty() ? Tensor::zeros(l.value().shape()) : l.grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& val = leaves[li].value();
    for (Index i = 0; i < val.size(); ++i) {
      const double keep = val[i];
      val[i] = keep + eps;
      const double fp = build().item();
      val[i] = keep - eps;
      const double fm = build().item();
      val[i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = grads[li][i];
      const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("backward accumulates through shared subexpressions") {
  Var x = Var::leaf(Tensor::scalar(3.0), true);
  Var y = ad::add(ad::mul(x, x), x);  // x^2 + x
  ad::backward(y);
  CHECK(y.item() == doctest::Approx(12.0));
  CHECK(x.grad()[0] == doctest::Approx(7.0));  // 2x + 1

  // A second backward without zero_grad accumulates on the leaf.
  Var y2 = ad::scale(x, 2.0);
  ad::backward(y2);
  CHECK(x.grad()[0] == doctest::Approx(9.0));
  x.zero_grad();
  CHECK(x.grad().empty());
}

TEST_CASE("backward rejects non-scalar roots") {
  Var x = Var::leaf(Tensor::zeros({2, 2}), true);
  CHECK_THROWS_AS(ad::backward(x), bevcal::Error);
}

TEST_CASE("elementwise ops match finite differences") {
  Rng rng = Rng::stream(11, 1);
  Var a = Var::leaf(random_tensor({3, 4}, rng), true);
  Var b = Var::leaf(random_tensor({3, 4}, rng), true);
  auto build = [&] {
    Var s = ad::add(ad::mul(a, b), ad::scale(ad::sub(a, b), 0.7));
    s = ad::add_scalar(s, 0.3);
    return ad::add(ad::sum_all(ad::gelu(s)), ad::mean_all(ad::mul(s, s)));
  };
  CHECK(fd_max_rel_err({a, b}, build) < 1e-6);
}

TEST_CASE("gelu endpoints") {
  Var x = Var::leaf(Tensor::from({3}, {0.0, 10.0, -10.0}), true);
  Var y = ad::gelu(x);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == doctest::Approx(10.0));
  CHECK(std::abs(y.value()[2]) < 1e-8);
}

TEST_CASE("reshape and concat keep data order and route gradients") {
  Rng rng = Rng::stream(11, 2);
  Var a = Var::leaf(random_tensor({2, 3}, rng), true);
  Var b = Var::leaf(random_tensor({1, 3}, rng), true);
  Var c = ad::concat0(a, b);
  CHECK(c.value().dim(0) == 3);
  CHECK(c.value()[5] == a.value()[5]);
  CHECK(c.value()[6] == b.value()[0]);

  auto build = [&] {
    Var m = ad::concat0(a, b);
    m = ad::reshape(m, {3, 3});
    return ad::sum_all(ad::mul(m, m));
  };
  CHECK(fd_max_rel_err({a, b}, build) < 1e-6);
}

TEST_CASE("concat_cols splices columns and splits gradients") {
  Rng rng = Rng::stream(11, 3);
  Var a = Var::leaf(random_tensor({2, 2}, rng), true);
  Var b = Var::leaf(random_tensor({2, 3}, rng), true);
  Var c = ad::concat_cols({a, b});
  CHECK(c.value().dim(1) == 5);
  CHECK(c.value().at2(1, 0) == a.value().at2(1, 0));
  CHECK(c.value().at2(0, 4) == b.value().at2(0, 2));
  auto build = [&] { return ad::sum_all(ad::gelu(ad::concat_cols({a, b}))); };
  CHECK(fd_max_rel_err({a, b}, build) < 1e-6);
}

TEST_CASE("slice_cols extracts a contiguous block") {
  Rng rng = Rng::stream(11, 4);
  Var a = Var::leaf(random_tensor({3, 5}, rng), true);
  Var s = ad::slice_cols(a, 1, 4);
  CHECK(s.value().dim(1) == 3);
  CHECK(s.value().at2(2, 0) == a.value().at2(2, 1));
  auto build = [&] { return ad::sum_all(ad::mul(ad::slice_cols(a, 1, 4), ad::slice_cols(a, 0, 3))); };
  CHECK(fd_max_rel_err({a}, build) < 1e-6);
}

TEST_CASE("gather and scatter index ops") {
  Rng rng = Rng::stream(11, 5);
  Var rows = Var::leaf(random_tensor({4, 3}, rng), true);
  Var g = ad::gather_rows(rows, {2, 0, 2});
  CHECK(g.value().at2(0, 1) == rows.value().at2(2, 1));
  CHECK(g.value().at2(1, 2) == rows.value().at2(0, 2));
  auto build_rows = [&] { return ad::sum_all(ad::gelu(ad::gather_rows(rows, {2, 0, 2}))); };
  CHECK(fd_max_rel_err({rows}, build_rows) < 1e-6);

  Var grid = Var::leaf(random_tensor({3, 6}, rng), true);  // (C, cells)
  Var gc = ad::gather_cols(grid, {5, 1});
  CHECK(gc.value().dim(0) == 2);
  CHECK(gc.value().at2(0, 2) == grid.value().at2(2, 5));
  auto build_cols = [&] { return ad::sum_all(ad::mul(ad::gather_cols(grid, {5, 1}), ad::gather_cols(grid, {5, 1}))); };
  CHECK(fd_max_rel_err({grid}, build_cols) < 1e-6);

  Var toks = Var::leaf(random_tensor({2, 3}, rng), true);  // (M, C)
  Var sc = ad::scatter_cols(toks, {4, 0}, 6);
  CHECK(sc.value().dim(0) == 3);
  CHECK(sc.value().at2(1, 4) == toks.value().at2(0, 1));
  CHECK(sc.value().at2(2, 0) == toks.value().at2(1, 2));
  CHECK(sc.value().at2(0, 3) == 0.0);
  auto build_sc = [&] { return ad::sum_all(ad::gelu(ad::scatter_cols(toks, {4, 0}, 6))); };
  CHECK(fd_max_rel_err({toks}, build_sc) < 1e-6);
}

TEST_CASE("matmul agrees with Eigen and finite differences") {
  Rng rng = Rng::stream(11, 6);
  Var a = Var::leaf(random_tensor({3, 4}, rng), true);
  Var b = Var::leaf(random_tensor({4, 2}, rng), true);
  Var c = ad::matmul(a, b);
  Eigen::MatrixXd expect = a.value().mat() * b.value().mat();
  CHECK((c.value().mat() - expect).cwiseAbs().maxCoeff() < 1e-12);
  auto build = [&] { return ad::sum_all(ad::gelu(ad::matmul(a, b))); };
  CHECK(fd_max_rel_err({a, b}, build) < 1e-6);
}

TEST_CASE("transpose, add_rowvec, mean_rows") {
  Rng rng = Rng::stream(11, 7);
  Var x = Var::leaf(random_tensor({3, 4}, rng), true);
  Var bias = Var::leaf(random_tensor({4}, rng), true);
  CHECK(ad::transpose(x).value().at2(1, 2) == x.value().at2(2, 1));
  Var m = ad::mean_rows(x);
  CHECK(m.value()[1] ==
        doctest::Approx((x.value().at2(0, 1) + x.value().at2(1, 1) + x.value().at2(2, 1)) / 3));
  auto build = [&] {
    Var y = ad::add_rowvec(ad::transpose(ad::transpose(x)), bias);
    return ad::sum_all(ad::gelu(ad::mean_rows(y)));
  };
  CHECK(fd_max_rel_err({x, bias}, build) < 1e-6);
}

TEST_CASE("softmax rows normalize and differentiate") {
  Rng rng = Rng::stream(11, 8);
  Var x = Var::leaf(random_tensor({4, 5}, rng, 3.0), true);
  Var p = ad::softmax_rows(x);
  for (Index i = 0; i < 4; ++i) {
    double s = 0.0;
    for (Index j = 0; j < 5; ++j) s += p.value().at2(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Var w = Var::leaf(random_tensor({4, 5}, rng), false);
  auto build = [&] { return ad::sum_all(ad::mul(ad::softmax_rows(x), w)); };
  CHECK(fd_max_rel_err({x}, build) < 1e-6);
}

TEST_CASE("layer_norm standardizes rows and differentiates") {
  Rng rng = Rng::stream(11, 9);
  Var x = Var::leaf(random_tensor({3, 8}, rng, 2.0), true);
  Var gamma = Var::leaf(Tensor::full({8}, 1.0), true);
  Var beta = Var::leaf(Tensor::zeros({8}), true);
  Var y = ad::layer_norm(x, gamma, beta);
  for (Index i = 0; i < 3; ++i) {
    double mean = 0.0, var = 0.0;
    for (Index j = 0; j < 8; ++j) mean += y.value().at2(i, j);
    mean /= 8;
    for (Index j = 0; j < 8; ++j) var += std::pow(y.value().at2(i, j) - mean, 2);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var / 8 == doctest::Approx(1.0).epsilon(1e-5));
  }
  Var w = Var::leaf(random_tensor({3, 8}, rng), false);
  auto build = [&] { return ad::sum_all(ad::mul(ad::layer_norm(x, gamma, beta), w)); };
  CHECK(fd_max_rel_err({x, gamma, beta}, build) < 1e-5);
}

TEST_CASE("attention_head equals its unfused composition") {
  Rng rng = Rng::stream(11, 10);
  Var q = Var::leaf(random_tensor({5, 3}, rng), true);
  Var k = Var::leaf(random_tensor({5, 3}, rng), true);
  Var v = Var::leaf(random_tensor({5, 3}, rng), true);
  Var fused = ad::attention_head(q, k, v);
  Var probs = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(3.0)));
  Var ref = ad::matmul(probs, v);
  CHECK((fused.value().mat() - ref.value().mat()).cwiseAbs().maxCoeff() < 1e-12);

  Var w = Var::leaf(random_tensor({5, 3}, rng), false);
  auto build = [&] { return ad::sum_all(ad::mul(ad::attention_head(q, k, v), w)); };
  CHECK(fd_max_rel_err({q, k, v}, build) < 1e-6);
}

TEST_CASE("conv2d matches a direct convolution loop") {
  Rng rng = Rng::stream(11, 12);
  const Index cin = 2, h = 5, w = 6, cout = 3, kh = 3, kw = 3;
  const int stride = 2, pad = 1;
  Var x = Var::leaf(random_tensor({cin, h, w}, rng), true);
  Var wt = Var::leaf(random_tensor({cout, cin, kh, kw}, rng), true);
  Var b = Var::leaf(random_tensor({cout}, rng), true);
  Var y = ad::conv2d(x, wt, b, stride, pad);
  const Index ho = (h + 2 * pad - kh) / stride + 1;
  const Index wo = (w + 2 * pad - kw) / stride + 1;
  REQUIRE(y.value().dim(1) == ho);
  REQUIRE(y.value().dim(2) == wo);
  for (Index co = 0; co < cout; ++co)
    for (Index oh = 0; oh < ho; ++oh)
      for (Index ow = 0; ow < wo; ++ow) {
        double acc = b.value()[co];
        for (Index ci = 0; ci < cin; ++ci)
          for (Index ki = 0; ki < kh; ++ki)
            for (Index kj = 0; kj < kw; ++kj) {
              const Index ih = oh * stride - pad + ki, iw = ow * stride - pad + kj;
              if (ih >= 0 && ih < h && iw >= 0 && iw < w)
                acc += x.value().at3(ci, ih, iw) * wt.value()[((co * cin + ci) * kh + ki) * kw + kj];
            }
        CHECK(y.value().at3(co, oh, ow) == doctest::Approx(acc).epsilon(1e-12));
      }
  auto build = [&] { return ad::sum_all(ad::gelu(ad::conv2d(x, wt, b, stride, pad))); };
  CHECK(fd_max_rel_err({x, wt, b}, build) < 1e-5);
}

TEST_CASE("conv3d matches a direct convolution loop and keeps shape") {
  Rng rng = Rng::stream(11, 13);
  const Index cin = 2, dz = 3, h = 4, w = 4, cout = 2;
  Var x = Var::leaf(random_tensor({cin, dz, h, w}, rng), true);
  Var wt = Var::leaf(random_tensor({cout, cin, 3, 3, 3}, rng), true);
  Var b = Var::leaf(random_tensor({cout}, rng), true);
  Var y = ad::conv3d(x, wt, b, 1);
  REQUIRE(y.value().shape() == std::vector<Index>{cout, dz, h, w});
  for (Index co = 0; co < cout; ++co)
    for (Index oz = 0; oz < dz; ++oz)
      for (Index oh = 0; oh < h; ++oh)
        for (Index ow = 0; ow < w; ++ow) {
          double acc = b.value()[co];
          for (Index ci = 0; ci < cin; ++ci)
            for (Index kz = 0; kz < 3; ++kz)
              for (Index ki = 0; ki < 3; ++ki)
                for (Index kj = 0; kj < 3; ++kj) {
                  const Index iz = oz - 1 + kz, ih = oh - 1 + ki, iw = ow - 1 + kj;
                  if (iz >= 0 && iz < dz && ih >= 0 && ih < h && iw >= 0 && iw < w)
                    acc += x.value()[((ci * dz + iz) * h + ih) * w + iw] *
                           wt.value()[(((co * cin + ci) * 3 + kz) * 3 + ki) * 3 + kj];
                }
          CHECK(y.value()[((co * dz + oz) * h + oh) * w + ow] ==
                doctest::Approx(acc).epsilon(1e-12));
        }
  auto build = [&] { return ad::mean_all(ad::gelu(ad::conv3d(x, wt, b, 1))); };
  CHECK(fd_max_rel_err({x, wt, b}, build) < 1e-5);
}

TEST_CASE("upsample2_nearest doubles spatial dims") {
  Rng rng = Rng::stream(11, 14);
  Var x = Var::leaf(random_tensor({2, 2, 3}, rng), true);
  Var y = ad::upsample2_nearest(x);
  REQUIRE(y.value().shape() == std::vector<Index>{2, 4, 6});
  CHECK(y.value().at3(1, 2, 4) == x.value().at3(1, 1, 2));
  CHECK(y.value().at3(1, 3, 5) == x.value().at3(1, 1, 2));
  auto build = [&] { return ad::sum_all(ad::gelu(ad::upsample2_nearest(x))); };
  CHECK(fd_max_rel_err({x}, build) < 1e-6);
}

TEST_CASE("frustum_outer forms the depth-feature outer product") {
  Rng rng = Rng::stream(11, 15);
  Var w = Var::leaf(random_tensor({3, 4}, rng), true);  // (D, P)
  Var f = Var::leaf(random_tensor({2, 4}, rng), true);  // (C, P)
  Var o = ad::frustum_outer(w, f);
  REQUIRE(o.value().shape() == std::vector<Index>{3, 2, 4});
  CHECK(o.value().at3(2, 1, 3) ==
        doctest::Approx(w.value().at2(2, 3) * f.value().at2(1, 3)).epsilon(1e-15));
  auto build = [&] { return ad::sum_all(ad::gelu(ad::frustum_outer(w, f))); };
  CHECK(fd_max_rel_err({w, f}, build) < 1e-6);
}

TEST_CASE("bev_scatter accumulates per cell and drops negative cells") {
  Rng rng = Rng::stream(11, 16);
  const Index d = 2, c = 3, p = 4, cells_n = 5;
  Var fr = Var::leaf(random_tensor({d, c, p}, rng), true);
  std::vector<Index> cells = {0, 3, -1, 3, 1, 0, 3, -1};  // (d*p), d-major
  Var out = ad::bev_scatter(fr, cells, cells_n);
  REQUIRE(out.value().shape() == std::vector<Index>{c, cells_n});

  Tensor expect = Tensor::zeros({c, cells_n});
  for (Index di = 0; di < d; ++di)
    for (Index pi = 0; pi < p; ++pi) {
      const Index cell = cells[static_cast<std::size_t>(di * p + pi)];
      if (cell < 0) continue;
      for (Index ci = 0; ci < c; ++ci)
        expect[ci * cells_n + cell] += fr.value().at3(di, ci, pi);
    }
  for (Index i = 0; i < expect.size(); ++i) CHECK(out.value()[i] == expect[i]);

  auto build = [&] { return ad::sum_all(ad::gelu(ad::bev_scatter(fr, cells, cells_n))); };
  CHECK(fd_max_rel_err({fr}, build) < 1e-6);
}

TEST_CASE("l2_normalize and norm2") {
  Rng rng = Rng::stream(11, 17);
  Var v = Var::leaf(random_tensor({4}, rng), true);
  Var u = ad::l2_normalize(v);
  CHECK(u.value().vec().norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ad::norm2(v).item() == doctest::Approx(v.value().vec().norm()));
  CHECK_THROWS_AS(ad::l2_normalize(Var::leaf(Tensor::zeros({4}), true)),
                  bevcal::InvalidRotationError);

  Var w = Var::leaf(random_tensor({4}, rng), false);
  auto build_u = [&] { return ad::sum_all(ad::mul(ad::l2_normalize(v), w)); };
  CHECK(fd_max_rel_err({v}, build_u) < 1e-6);
  auto build_n = [&] { return ad::norm2(v); };
  CHECK(fd_max_rel_err({v}, build_n) < 1e-6);
}

TEST_CASE("geodesic_angle values and gradient") {
  Var qi = Var::leaf(Tensor::from({4}, {1, 0, 0, 0}), true);
  CHECK(ad::geodesic_angle(qi).item() == 0.0);

  const double s = std::sqrt(0.5);
  Var q90 = Var::leaf(Tensor::from({4}, {s, 0, 0, s}), true);
  CHECK(ad::geodesic_angle(q90).item() ==
        doctest::Approx(3.14159265358979323846 / 2).epsilon(1e-12));

  // Sign-flipped quaternion gives the same angle.
  Var q90n = Var::leaf(Tensor::from({4}, {-s, 0, 0, -s}), true);
  CHECK(ad::geodesic_angle(q90n).item() == doctest::Approx(ad::geodesic_angle(q90).item()));

  Rng rng = Rng::stream(11, 18);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor t({4});
    for (int i = 0; i < 4; ++i) t[i] = rng.symmetric(1.0) + (i == 0 ? 1.5 : 0.0);
    Var q = Var::leaf(t, true);
    auto build = [&] { return ad::geodesic_angle(q); };
    CHECK(fd_max_rel_err({q}, build) < 1e-6);
  }
}

TEST_CASE("smooth_l1_mean values and gradient") {
  Tensor target = Tensor::zeros({3});
  Var near = Var::leaf(Tensor::from({3}, {0.5, 0, 0}), true);
  CHECK(ad::smooth_l1_mean(near, target, 1.0).item() == doctest::Approx(0.125 / 3.0));
  Var far = Var::leaf(Tensor::from({3}, {2, 0, 0}), true);
  CHECK(ad::smooth_l1_mean(far, target, 1.0).item() == doctest::Approx(0.5));

  Rng rng = Rng::stream(11, 19);
  Var x = Var::leaf(random_tensor({3}, rng, 2.0), true);
  auto build = [&] { return ad::smooth_l1_mean(x, target, 1.0); };
  CHECK(fd_max_rel_err({x}, build) < 1e-6);
}

TEST_CASE("quat_rotmat forward and gradient") {
  const double s = std::sqrt(0.5);
  Var q = Var::leaf(Tensor::from({4}, {s, 0, 0, s}), true);
  Var r = ad::quat_rotmat(q);
  CHECK(r.value().at2(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.value().at2(0, 1) == doctest::Approx(-1.0));
  CHECK(r.value().at2(1, 0) == doctest::Approx(1.0));
  CHECK(r.value().at2(2, 2) == doctest::Approx(1.0));

  Rng rng = Rng::stream(11, 20);
  Var w = Var::leaf(random_tensor({3, 3}, rng), false);
  Var qr = Var::leaf(random_tensor({4}, rng), true);
  auto build = [&] { return ad::sum_all(ad::mul(ad::quat_rotmat(qr), w)); };
  CHECK(fd_max_rel_err({qr}, build) < 1e-6);
}

TEST_CASE("sub_colvec_from_const and colwise_norm_mean") {
  Rng rng = Rng::stream(11, 21);
  Tensor base = random_tensor({3, 5}, rng);
  Var t = Var::leaf(random_tensor({3}, rng), true);
  Var y = ad::sub_colvec_from_const(base, t);
  CHECK(y.value().at2(1, 2) == doctest::Approx(base.at2(1, 2) - t.value()[1]));

  double expect = 0.0;
  for (Index j = 0; j < 5; ++j) {
    double n2 = 0.0;
    for (Index i = 0; i < 3; ++i) n2 += std::pow(y.value().at2(i, j), 2);
    expect += std::sqrt(n2);
  }
  CHECK(ad::colwise_norm_mean(y).item() == doctest::Approx(expect / 5.0));

  auto build = [&] { return ad::colwise_norm_mean(ad::sub_colvec_from_const(base, t)); };
  CHECK(fd_max_rel_err({t}, build) < 1e-6);
}

TEST_CASE("constants are excluded from the tape") {
  Var c = Var::constant(Tensor::from({2}, {1.0, 2.0}));
  Var x = Var::leaf(Tensor::from({2}, {3.0, 4.0}), true);
  Var y = ad::sum_all(ad::mul(c, x));
  ad::backward(y);
  CHECK(c.grad().empty());
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}
