#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "reference_net.hpp"
#include "sfl/error.hpp"
#include "sfl/kernels.hpp"
#include "sfl/loss.hpp"
#include "sfl/network.hpp"

using namespace sfl;
using gradcheck::kTol;
using gradcheck::kH;
using gradcheck::norm_rel_err;
using gradcheck::pick;

TEST_CASE("dense gradients match finite differences") {
  const auto r = gradcheck::dense_suite();
  CHECK(r.instances >= 100);
  CHECK(r.input_err < kTol);
  CHECK(r.param_err < kTol);
}

TEST_CASE("conv2d gradients match finite differences") {
  const auto r = gradcheck::conv_suite();
  CHECK(r.input_err < kTol);
  CHECK(r.param_err < kTol);
}

TEST_CASE("relu gradients match finite differences") { CHECK(gradcheck::relu_suite().worst() < kTol); }

TEST_CASE("maxpool gradients match finite differences") {
  CHECK(gradcheck::maxpool_suite().worst() < kTol);
}

TEST_CASE("flatten and head pass gradients through") {
  CHECK(gradcheck::flatten_suite().worst() < kTol);
  CHECK(gradcheck::head_suite().worst() < kTol);
}

TEST_CASE("composed conv network gradients match finite differences") {
  const auto r = gradcheck::composed_suite();
  CHECK(r.input_err < kTol);
  CHECK(r.param_err < kTol);
}

TEST_CASE("distance correlation gradient matches binary64 differences") {
  const auto r = gradcheck::dcor_suite();
  CHECK(r.instances == 100);
  CHECK(r.worst() < kTol);
}

TEST_CASE("forward matches the binary64 reference on both presets") {
  std::mt19937_64 rng(17);
  Network mlp({10}, {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(3), LayerSpec::head()});
  mlp.init_xavier(1);
  Network cnn({1, 12, 12}, {LayerSpec::conv2d(3, 5), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
                            LayerSpec::flatten(), LayerSpec::dense(4), LayerSpec::head()});
  cnn.init_xavier(2);
  for (const Network* net : {&mlp, &cnn}) {
    Shape xs{5};
    for (auto d : net->input_shape()) xs.push_back(d);
    const Tensor x = testutil::random_tensor(xs, rng);
    const Tensor y = net->forward(x);
    const auto yr = ref::forward(ref::from(*net), {x.data().begin(), x.data().end()}, 5);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(yr[i]).epsilon(1e-5));
  }
}

TEST_CASE("serial and omp kernels agree bit for bit") {
  std::mt19937_64 rng(18);
  auto rnd = [&](std::size_t n) {
    std::vector<float> v(n);
    std::normal_distribution<float> nd;
    for (auto& x : v) x = nd(rng);
    return v;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const kernels::DenseDims d{pick(rng, 1, 9), pick(rng, 1, 40), pick(rng, 1, 30)};
    auto x = rnd(d.batch * d.in), w = rnd(d.in * d.out), b = rnd(d.out), gy = rnd(d.batch * d.out);
    std::vector<float> y1(d.batch * d.out), y2(y1.size());
    kernels::serial::dense_forward(d, x, w, b, y1);
    kernels::omp::dense_forward(d, x, w, b, y2);
    CHECK(y1 == y2);
    std::vector<float> gw1(w.size()), gw2(w.size()), gb1(b.size()), gb2(b.size()), gx1(x.size()), gx2(x.size());
    kernels::serial::dense_backward(d, x, w, gy, gw1, gb1, gx1);
    kernels::omp::dense_backward(d, x, w, gy, gw2, gb2, gx2);
    CHECK(gw1 == gw2);
    CHECK(gb1 == gb2);
    CHECK(gx1 == gx2);

    const kernels::ConvDims c{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 5, 10), pick(rng, 5, 10),
                              pick(rng, 1, 4), pick(rng, 1, 5)};
    auto cx = rnd(c.batch * c.in_ch * c.height * c.width);
    auto cw = rnd(c.out_ch * c.in_ch * c.kernel * c.kernel), cb = rnd(c.out_ch);
    const std::size_t ny = c.batch * c.out_ch * c.out_h() * c.out_w();
    std::vector<float> cy1(ny), cy2(ny);
    kernels::serial::conv2d_forward(c, cx, cw, cb, cy1);
    kernels::omp::conv2d_forward(c, cx, cw, cb, cy2);
    CHECK(cy1 == cy2);
    auto cgy = rnd(ny);
    std::vector<float> cgw1(cw.size()), cgw2(cw.size()), cgb1(cb.size()), cgb2(cb.size()),
        cgx1(cx.size()), cgx2(cx.size());
    kernels::serial::conv2d_backward(c, cx, cw, cgy, cgw1, cgb1, cgx1);
    kernels::omp::conv2d_backward(c, cx, cw, cgy, cgw2, cgb2, cgx2);
    CHECK(cgw1 == cgw2);
    CHECK(cgb1 == cgb2);
    CHECK(cgx1 == cgx2);

    const kernels::PoolDims p{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 4, 9), pick(rng, 4, 9), 2,
                              pick(rng, 1, 2)};
    auto px = rnd(p.batch * p.channels * p.height * p.width);
    const std::size_t np = p.batch * p.channels * p.out_h() * p.out_w();
    std::vector<float> py1(np), py2(np);
    std::vector<uint32_t> a1(np), a2(np);
    kernels::serial::maxpool_forward(p, px, py1, a1);
    kernels::omp::maxpool_forward(p, px, py2, a2);
    CHECK(py1 == py2);
    CHECK(a1 == a2);
    auto pgy = rnd(np);
    std::vector<float> pgx1(px.size()), pgx2(px.size());
    kernels::serial::maxpool_backward(p, pgy, a1, pgx1);
    kernels::omp::maxpool_backward(p, pgy, a2, pgx2);
    CHECK(pgx1 == pgx2);

    const std::size_t n = pick(rng, 2, 30), q = pick(rng, 1, 8);
    std::vector<double> m(n * q), d1(n * n), d2(n * n);
    for (auto& v : m) v = std::normal_distribution<double>()(rng);
    kernels::serial::pairwise_distances(n, q, m, d1);
    kernels::omp::pairwise_distances(n, q, m, d2);
    CHECK(d1 == d2);
  }
}

TEST_CASE("whole training step is backend independent") {
  auto [tr, te] = testutil::blobs(200, 50, 3, 8, 4.0, 3);
  ExperimentSetup s = testutil::mlp_setup(Protocol::kCentral, 8, 3, 200, 1, 2);
  kernels::set_backend(kernels::Backend::kSerial);
  const auto a = run_experiment(s, tr, te);
  kernels::set_backend(kernels::Backend::kOmp);
  const auto b = run_experiment(s, tr, te);
  CHECK(a.to_csv(false) == b.to_csv(false));
  CHECK(a.final_model.portions[0].flat_params() == b.final_model.portions[0].flat_params());
}

TEST_CASE("maxpool ties resolve to the first element of the window") {
  Network net({1, 2, 2}, {LayerSpec::maxpool2d(2, 2)});
  Tape tape;
  const Tensor y = net.forward(Tensor({1, 1, 2, 2}, {3, 3, 3, 3}), &tape);
  CHECK(y[0] == 3.0f);
  const auto bw = net.backward(tape, Tensor({1, 1, 1, 1}, {1}));
  CHECK(bw.input_grad.vec() == std::vector<float>{1, 0, 0, 0});
}

TEST_CASE("tapes are bound to one network and one parameter version") {
  Network net({3}, {LayerSpec::dense(2), LayerSpec::head()});
  net.init_xavier(1);
  const Tensor x({1, 3}, {1, 2, 3});
  const Tensor g({1, 2}, {1, 1});
  CHECK_THROWS_AS(net.backward(Tape{}, g), TapeError);

  Tape tape;
  net.forward(x, &tape);
  Network copy = net;
  CHECK_THROWS_AS(copy.backward(tape, g), TapeError);

  const auto bw = net.backward(tape, g);
  net.sgd_step(bw.grads, 0.1f);
  CHECK_THROWS_AS(net.backward(tape, g), TapeError);
}

TEST_CASE("non-finite activations are rejected") {
  Network net({2}, {LayerSpec::dense(2), LayerSpec::head()});
  net.init_xavier(1);
  CHECK_THROWS_AS(net.forward(Tensor({1, 2}, {NAN, 1})), NonFiniteError);
  CHECK_THROWS_AS(net.forward(Tensor({1, 2}, {INFINITY, 1})), NonFiniteError);
  CHECK_THROWS_AS(net.forward(Tensor({1, 3}, {1, 1, 1})), ShapeError);
}

TEST_CASE("xavier init is bounded, seeded and slice-consistent") {
  Network a({20}, {LayerSpec::dense(10), LayerSpec::relu(), LayerSpec::dense(5), LayerSpec::head()});
  Network b = a;
  a.init_xavier(9);
  b.init_xavier(9);
  CHECK(a.flat_params() == b.flat_params());
  const double bound = std::sqrt(6.0 / 30.0);
  for (float w : a.layers()[0].weight.data()) CHECK(std::fabs(w) <= bound);
  for (float v : a.layers()[0].bias.data()) CHECK(v == 0.0f);

  Network tail({10}, {LayerSpec::relu(), LayerSpec::dense(5), LayerSpec::head()});
  tail.init_xavier(9, 1);
  CHECK(tail.flat_params() == a.slice(1, 4).flat_params());
  b.init_xavier(10);
  CHECK(a.flat_params() != b.flat_params());
}

TEST_CASE("sgd step and flat parameter round trip") {
  Network net({2}, {LayerSpec::dense(2), LayerSpec::head()});
  net.set_flat_params(std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(net.flat_params() == std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto g = Gradients::from_flat(net, std::vector<float>{1, 1, 1, 1, 2, 2});
  net.sgd_step(g, 0.5f);
  CHECK(net.flat_params() == std::vector<float>{0.5f, 1.5f, 2.5f, 3.5f, 4, 5});
  CHECK_THROWS(net.set_flat_params(std::vector<float>{1, 2}));
}

TEST_CASE("cross entropy against closed forms") {
  // Equal logits: loss ln C, gradient (1/C - onehot) / B.
  const auto r = cross_entropy_loss(Tensor({2, 4}), std::vector<uint32_t>{0, 3});
  CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(r.grad[0] == doctest::Approx((0.25 - 1) / 2));
  CHECK(r.grad[1] == doctest::Approx(0.25 / 2));

  // Two classes: softplus of the logit gap.
  const auto s = cross_entropy_loss(Tensor({1, 2}, {2.0f, -1.0f}), std::vector<uint32_t>{1});
  CHECK(s.loss == doctest::Approx(std::log1p(std::exp(3.0))).epsilon(1e-12));
  CHECK(s.correct == 0);

  // Huge logits stay finite.
  const auto h = cross_entropy_loss(Tensor({1, 3}, {1e30f, -1e30f, 0}), std::vector<uint32_t>{0});
  CHECK(std::isfinite(h.loss));
  CHECK(h.grad.all_finite());

  CHECK_THROWS_AS(cross_entropy_loss(Tensor({1, 3}), std::vector<uint32_t>{3}), DataError);
  CHECK(argmax_rows(Tensor({1, 3}, {1, 1, 0})) == std::vector<uint32_t>{0});
}

TEST_CASE("cross entropy gradient matches finite differences") {
  std::mt19937_64 rng(19);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = pick(rng, 1, 4), c = pick(rng, 2, 6);
    const Tensor z = testutil::random_tensor({b, c}, rng, 2.0f);
    std::vector<uint32_t> y(b);
    for (auto& v : y) v = static_cast<uint32_t>(pick(rng, 0, c - 1));
    const auto r = cross_entropy_loss(z, y);
    auto loss = [&](std::vector<double> zz) {
      double l = 0;
      for (std::size_t i = 0; i < b; ++i) {
        double m = -1e300, s = 0;
        for (std::size_t j = 0; j < c; ++j) m = std::max(m, zz[i * c + j]);
        for (std::size_t j = 0; j < c; ++j) s += std::exp(zz[i * c + j] - m);
        l += m + std::log(s) - zz[i * c + y[i]];
      }
      return l / static_cast<double>(b);
    };
    std::vector<double> zd(z.data().begin(), z.data().end()), num, ana(r.grad.data().begin(), r.grad.data().end());
    for (std::size_t i = 0; i < zd.size(); ++i) {
      auto p = zd, m = zd;
      p[i] += kH;
      m[i] -= kH;
      num.push_back((loss(p) - loss(m)) / (2 * kH));
    }
    worst = std::max(worst, norm_rel_err(ana, num));
  }
  CHECK(worst < kTol);
}
