// tests/test_core.cc

// Copyright 2026  CEM-Net Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cemnet/core/autodiff.h"
#include "cemnet/core/io.h"
#include "cemnet/core/nn.h"
#include "cemnet/core/rng.h"
#include "cemnet/core/tensor.h"
#include "gradcheck.h"

using namespace cemnet;
using ad::Var;
namespace fs = std::filesystem;

static Tensor rand_tensor(std::vector<int> shape, Rng &rng, double lo = -1.0,
                          double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

TEST_CASE("rng determinism and fnv vectors") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(1235);
  CHECK(Rng(1234).next_u64() != c.next_u64());

  // Published FNV-1a 64 test vectors.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);

  Rng s1 = substream(42, "alpha");
  Rng s2 = substream(42, "alpha");
  Rng s3 = substream(42, "beta");
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(s1.next_u64() != s3.next_u64());

  // Permutations are valid permutations.
  Rng p(7);
  auto perm = p.permutation(17);
  std::vector<int> seen(17, 0);
  for (int v : perm) {
    REQUIRE(v >= 0);
    REQUIRE(v < 17);
    seen[v]++;
  }
  for (int v : seen) CHECK(v == 1);

  // Normal draws have roughly unit moments.
  Rng g(99);
  double m = 0, m2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = g.normal();
    m += x;
    m2 += x * x;
  }
  m /= n;
  m2 /= n;
  CHECK(std::fabs(m) < 0.03);
  CHECK(std::fabs(m2 - 1.0) < 0.05);
}

TEST_CASE("tensor resample_rows") {
  // DERIVED: interpolation of rows [0,10] and [4,2] at 3 points:
  // positions 0, 0.5, 1 of the source range.
  Tensor x({2, 2}, {0.0, 10.0, 4.0, 2.0});
  Tensor y = resample_rows(x, 3);
  CHECK(y.at(0, 0) == doctest::Approx(0.0));
  CHECK(y.at(0, 1) == doctest::Approx(10.0));
  CHECK(y.at(1, 0) == doctest::Approx(2.0));
  CHECK(y.at(1, 1) == doctest::Approx(6.0));
  CHECK(y.at(2, 0) == doctest::Approx(4.0));
  CHECK(y.at(2, 1) == doctest::Approx(2.0));

  // Round trip up then down preserves endpoints.
  Rng rng(5);
  Tensor z = rand_tensor({7, 3}, rng);
  Tensor up = resample_rows(z, 29);
  CHECK(std::fabs(up.at(0, 1) - z.at(0, 1)) < 1e-12);
  CHECK(std::fabs(up.at(28, 2) - z.at(6, 2)) < 1e-12);

  CHECK_THROWS_AS(resample_rows(Tensor({2, 2, 2}), 3), InputError);
}

TEST_CASE("matmul forward oracle") {
  // DERIVED: [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]].
  Var a = ad::constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = ad::constant(Tensor({2, 2}, {5, 6, 7, 8}));
  Var c = ad::matmul(a, b);
  CHECK(c->value.at(0, 0) == doctest::Approx(19));
  CHECK(c->value.at(0, 1) == doctest::Approx(22));
  CHECK(c->value.at(1, 0) == doctest::Approx(43));
  CHECK(c->value.at(1, 1) == doctest::Approx(50));
  CHECK_THROWS_AS(ad::matmul(a, ad::constant(Tensor({3, 2}))), InputError);
}

TEST_CASE("conv2d forward matches naive loops") {
  Rng rng(11);
  const int N = 2, C = 3, H = 7, W = 6, OC = 4, K = 3, S = 2, P = 1;
  Tensor x = rand_tensor({N, C, H, W}, rng);
  Tensor w = rand_tensor({OC, C, K, K}, rng);
  Tensor b = rand_tensor({OC}, rng);
  Var out = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), S, P);
  const int OH = (H + 2 * P - K) / S + 1, OW = (W + 2 * P - K) / S + 1;
  REQUIRE(out->value.shape() == std::vector<int>{N, OC, OH, OW});
  // Independent scalar-loop oracle.
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b[oc];
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < K; ++i)
              for (int j = 0; j < K; ++j) {
                int yy = oy * S - P + i, xx = ox * S - P + j;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                acc += x[((static_cast<int64_t>(n) * C + c) * H + yy) * W + xx] *
                       w[((static_cast<int64_t>(oc) * C + c) * K + i) * K + j];
              }
          double got =
              out->value[((static_cast<int64_t>(n) * OC + oc) * OH + oy) * OW +
                         ox];
          CHECK(got == doctest::Approx(acc).epsilon(1e-9));
        }
}

TEST_CASE("bilinear_sample identity under zero flow") {
  Rng rng(13);
  Tensor img = rand_tensor({1, 3, 5, 5}, rng);
  Tensor flow({1, 2, 5, 5});
  Var out = ad::bilinear_sample(ad::constant(img), ad::constant(flow));
  CHECK(max_abs_diff(out->value, img) < 1e-12);

  // DERIVED: constant flow (+1, 0) shifts sampling one pixel right; at a
  // ramp image I(y,x)=x the interior result is x+1, border clamps to 4.
  Tensor ramp({1, 1, 5, 5});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) ramp[y * 5 + x] = x;
  Tensor f1({1, 2, 5, 5});
  for (int i = 0; i < 25; ++i) f1[i] = 1.0;  // dx channel
  Var shifted = ad::bilinear_sample(ad::constant(ramp), ad::constant(f1));
  CHECK(shifted->value[0 * 5 + 2] == doctest::Approx(3.0));
  CHECK(shifted->value[0 * 5 + 4] == doctest::Approx(4.0));
}

TEST_CASE("softmax, layer_norm, normalize invariants") {
  Rng rng(17);
  Tensor x = rand_tensor({4, 9}, rng, -3, 3);
  Var sm = ad::softmax_rows(ad::constant(x));
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) {
      CHECK(sm->value.at(i, j) > 0.0);
      s += sm->value.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  Var nrm = ad::l2_normalize_rows(ad::constant(x));
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) s += nrm->value.at(i, j) * nrm->value.at(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-8));
  }

  Var g = ad::constant(Tensor::full({9}, 1.0));
  Var be = ad::constant(Tensor::zeros({9}));
  Var ln = ad::layer_norm(ad::constant(x), g, be);
  for (int i = 0; i < 4; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 9; ++j) mu += ln->value.at(i, j);
    mu /= 9;
    for (int j = 0; j < 9; ++j) {
      double d = ln->value.at(i, j) - mu;
      var += d * d;
    }
    var /= 9;
    CHECK(std::fabs(mu) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("cross entropy forward oracle") {
  // DERIVED: logits [0, log 3] with label 1: softmax = [0.25, 0.75],
  // loss = -log 0.75 = 0.2876820724...
  Tensor lg({1, 2}, {0.0, std::log(3.0)});
  Var l = ad::cross_entropy_logits(ad::constant(lg), {1});
  CHECK(l->value[0] == doctest::Approx(0.28768207245178085).epsilon(1e-12));
}

// ---- gradient checks for every differentiable op ----

TEST_CASE("gradcheck elementwise and reductions") {
  Rng rng(23);
  Var a = ad::param(rand_tensor({3, 4}, rng, 0.2, 1.5));  // positive: log/sqrt
  Var b = ad::param(rand_tensor({3, 4}, rng, 0.3, 1.2));
  Rng prng(101);

  auto check = [&](const std::function<Var()> &f,
                   std::vector<Var> leaves) {
    CHECK(testutil::gradcheck(f, leaves) < 1e-6);
  };

  check([&] { Rng r(1); return testutil::project(ad::add(a, b), r); }, {a, b});
  check([&] { Rng r(2); return testutil::project(ad::sub(a, b), r); }, {a, b});
  check([&] { Rng r(3); return testutil::project(ad::mul(a, b), r); }, {a, b});
  check([&] { Rng r(4); return testutil::project(ad::scale(a, -2.3), r); }, {a});
  check([&] { Rng r(5); return testutil::project(ad::add_scalar(a, 0.7), r); },
        {a});
  check([&] { Rng r(6); return testutil::project(ad::sigmoid(a), r); }, {a});
  check([&] { Rng r(7); return testutil::project(ad::tanh_op(a), r); }, {a});
  check([&] { Rng r(8); return testutil::project(ad::softplus(a), r); }, {a});
  check([&] { Rng r(9); return testutil::project(ad::exp_op(a), r); }, {a});
  check([&] { Rng r(10); return testutil::project(ad::log_op(a), r); }, {a});
  check([&] { Rng r(11); return testutil::project(ad::sqrt_op(a), r); }, {a});
  check([&] { Rng r(12); return testutil::project(ad::square(a), r); }, {a});
  check([&] { Rng r(13); return testutil::project(ad::reciprocal(a), r); }, {a});
  check([&] { Rng r(14); return testutil::project(ad::sum_cols(a), r); }, {a});
  check([&] { Rng r(15); return testutil::project(ad::mean_rows(a), r); }, {a});
  check([&] { return ad::sum(a); }, {a});
  check([&] { return ad::mean(a); }, {a});

  // Kinked ops away from their kinks.
  Var c = ad::param(rand_tensor({3, 4}, rng, 0.1, 1.0));
  Var d = ad::param(rand_tensor({3, 4}, rng, -1.0, -0.1));
  check([&] { Rng r(16); return testutil::project(ad::relu(c), r); }, {c});
  check([&] { Rng r(17); return testutil::project(ad::relu(d), r); }, {d});
  check([&] { Rng r(18); return testutil::project(ad::leaky_relu(d, 0.2), r); },
        {d});
  check([&] { Rng r(19); return testutil::project(ad::abs_op(d), r); }, {d});

  Var s = ad::param(Tensor({1}, {0.8}));
  check([&] { Rng r(20); return testutil::project(ad::mul_scalar_var(a, s), r); },
        {a, s});
  (void)prng;
}

TEST_CASE("gradcheck linear algebra and shape ops") {
  Rng rng(29);
  Var a = ad::param(rand_tensor({3, 4}, rng));
  Var b = ad::param(rand_tensor({4, 5}, rng));
  Var bias = ad::param(rand_tensor({4}, rng));

  CHECK(testutil::gradcheck(
            [&] { Rng r(1); return testutil::project(ad::matmul(a, b), r); },
            {a, b}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] { Rng r(2); return testutil::project(ad::transpose(a), r); },
            {a}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] { Rng r(3); return testutil::project(ad::add_bias(a, bias), r); },
            {a, bias}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(4);
              return testutil::project(ad::reshape(a, {4, 3}), r);
            },
            {a}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(5);
              return testutil::project(ad::slice_rows(a, 1, 3), r);
            },
            {a}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(6);
              return testutil::project(ad::slice_cols(a, 0, 2), r);
            },
            {a}) < 1e-6);
  Var a2 = ad::param(rand_tensor({2, 4}, rng));
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(7);
              return testutil::project(ad::concat_rows({a, a2}), r);
            },
            {a, a2}) < 1e-6);
  Var a3 = ad::param(rand_tensor({3, 2}, rng));
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(8);
              return testutil::project(ad::concat_cols({a, a3}), r);
            },
            {a, a3}) < 1e-6);

  CHECK(testutil::gradcheck(
            [&] {
              Rng r(9);
              return testutil::project(ad::softmax_rows(a), r);
            },
            {a}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(10);
              return testutil::project(ad::l2_normalize_rows(a), r);
            },
            {a}) < 1e-6);

  Var gm = ad::param(rand_tensor({4}, rng, 0.5, 1.5));
  Var bt = ad::param(rand_tensor({4}, rng));
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(11);
              return testutil::project(ad::layer_norm(a, gm, bt), r);
            },
            {a, gm, bt}) < 1e-6);

  CHECK(testutil::gradcheck(
            [&] { return ad::cross_entropy_logits(a, {1, 3, 0}); }, {a}) <
        1e-6);
}

TEST_CASE("gradcheck conv stack ops") {
  Rng rng(31);
  Var x = ad::param(rand_tensor({2, 2, 6, 6}, rng));
  Var w = ad::param(rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
  Var b = ad::param(rand_tensor({3}, rng, -0.2, 0.2));

  CHECK(testutil::gradcheck(
            [&] {
              Rng r(1);
              return testutil::project(ad::conv2d(x, w, b, 1, 1), r);
            },
            {x, w, b}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(2);
              return testutil::project(ad::conv2d(x, w, b, 2, 1), r);
            },
            {x, w, b}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(3);
              return testutil::project(ad::avg_pool2d(x, 2), r);
            },
            {x}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(4);
              return testutil::project(ad::upsample2x(x), r);
            },
            {x}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(5);
              return testutil::project(ad::mean_hw(x), r);
            },
            {x}) < 1e-6);
  Var x2 = ad::param(rand_tensor({2, 1, 6, 6}, rng));
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(6);
              return testutil::project(ad::concat_channels({x, x2}), r);
            },
            {x, x2}) < 1e-6);
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(7);
              return testutil::project(ad::slice_channels(x, 1, 2), r);
            },
            {x}) < 1e-6);

  // Flow values keep samples interior and off integer lattice points.
  Var img = ad::param(rand_tensor({1, 2, 6, 6}, rng));
  Var flow = ad::param(rand_tensor({1, 2, 6, 6}, rng, 0.2, 0.4));
  CHECK(testutil::gradcheck(
            [&] {
              Rng r(8);
              return testutil::project(ad::bilinear_sample(img, flow), r);
            },
            {img, flow}) < 1e-5);
}

TEST_CASE("gradcheck fused losses and stop_gradient") {
  Rng rng(37);
  Var a = ad::param(rand_tensor({3, 4}, rng));
  Var b = ad::param(rand_tensor({3, 4}, rng));
  CHECK(testutil::gradcheck([&] { return ad::mse_loss(a, b); }, {a, b}) < 1e-6);
  CHECK(testutil::gradcheck([&] { return ad::l1_loss(a, b); }, {a, b}) < 1e-6);

  // stop_gradient blocks flow entirely.
  Var l = ad::sum(ad::mul(a, ad::stop_gradient(b)));
  ad::backward(l);
  CHECK(a->grad_set);
  CHECK_FALSE(b->grad_set);
}

TEST_CASE("multi-path accumulation") {
  // y = x*x + x achieved via two separate paths into add; grad = 2x + 1.
  Var x = ad::param(Tensor({1}, {3.0}));
  Var y = ad::add(ad::mul(x, x), x);
  ad::backward(y);
  CHECK(x->grad[0] == doctest::Approx(7.0));
}

TEST_CASE("adam optimizes a quadratic and clip works") {
  nn::ParamStore ps;
  Var w = ps.add("w", Tensor({2}, {5.0, -3.0}));
  nn::Adam opt(ps, 0.1);
  for (int i = 0; i < 400; ++i) {
    Var loss = ad::sum(ad::square(w));
    ad::backward(loss);
    opt.step();
  }
  CHECK(std::fabs(w->value[0]) < 1e-2);
  CHECK(std::fabs(w->value[1]) < 1e-2);

  ps.zero_grad();
  Var loss = ad::sum(ad::scale(w, 1000.0));
  ad::backward(loss);
  double pre = nn::clip_global_norm(ps, 1.0);
  CHECK(pre > 100.0);
  double post = 0;
  for (int64_t i = 0; i < w->grad.numel(); ++i) post += w->grad[i] * w->grad[i];
  CHECK(std::sqrt(post) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("linear layer trains a tiny regression") {
  Rng rng(41);
  nn::ParamStore ps;
  nn::Linear fc(ps, "fc", 3, 1, rng);
  nn::Adam opt(ps, 0.05);
  // Target function y = 2 x0 - x1 + 0.5 x2.
  Tensor X = rand_tensor({32, 3}, rng);
  Tensor Y({32, 1});
  for (int i = 0; i < 32; ++i)
    Y.at(i, 0) = 2 * X.at(i, 0) - X.at(i, 1) + 0.5 * X.at(i, 2);
  double last = 1e9;
  for (int it = 0; it < 300; ++it) {
    Var loss = ad::mse_loss(fc(ad::constant(X)), ad::constant(Y));
    ad::backward(loss);
    opt.step();
    last = loss->value[0];
  }
  CHECK(last < 1e-4);
}

// ---- io ----

TEST_CASE("blob round trip and error paths") {
  const std::string dir = "/tmp/cemnet_test_io";
  fs::create_directories(dir);
  Tensor t({3, 5});
  Rng rng(43);
  // Multiples of 1/256 survive the float32 round trip exactly.
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = rng.uniform_int(512) / 256.0 - 1.0;
  write_blob(dir + "/x.f32", t);
  Tensor u = read_blob(dir + "/x.f32");
  REQUIRE(u.shape() == t.shape());
  CHECK(max_abs_diff(u, t) == 0.0);

  // Truncated payload.
  auto bytes = read_file_bytes(dir + "/x.f32");
  bytes.resize(bytes.size() - 3);
  write_file_bytes(dir + "/trunc.f32", bytes);
  CHECK_THROWS_AS(read_blob(dir + "/trunc.f32"), FormatError);

  // Bad magic.
  bytes = read_file_bytes(dir + "/x.f32");
  bytes[0] = 'X';
  write_file_bytes(dir + "/magic.f32", bytes);
  CHECK_THROWS_AS(read_blob(dir + "/magic.f32"), FormatError);

  CHECK_THROWS_AS(read_blob(dir + "/missing.f32"), FormatError);
}

TEST_CASE("checkpoint archive round trip, tamper detection") {
  const std::string dir = "/tmp/cemnet_test_ckpt";
  fs::remove_all(dir);
  CheckpointArchive a;
  a.set_module("demo");
  a.set_seed(0xdeadbeefcafef00dull);
  a.meta()["note"] = "hello";
  Rng rng(47);
  Tensor w({4, 3});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform_int(512) / 128.0;
  a.put("layer.w", w);
  a.put("layer.b", Tensor({3}, {1.0, 2.0, 3.0}));
  a.save(dir);

  CheckpointArchive b = CheckpointArchive::load(dir);
  CHECK(b.module() == "demo");
  CHECK(b.seed() == 0xdeadbeefcafef00dull);
  CHECK(b.meta()["note"] == "hello");
  REQUIRE(b.has("layer.w"));
  CHECK(max_abs_diff(b.get("layer.w"), w) == 0.0);
  CHECK(b.get("layer.b")[2] == 3.0);

  // Flip one byte in the payload: hash check must reject it.
  auto bytes = read_file_bytes(dir + "/tensors.bin");
  bytes[bytes.size() / 2] ^= 0x40;
  write_file_bytes(dir + "/tensors.bin", bytes);
  CHECK_THROWS_AS(CheckpointArchive::load(dir), FormatError);

  // Version mismatch.
  fs::remove_all(dir);
  a.save(dir);
  auto manifest = load_json(dir + "/manifest.json");
  manifest["format_version"] = 999;
  save_json(dir + "/manifest.json", manifest);
  CHECK_THROWS_AS(CheckpointArchive::load(dir), FormatError);
}

TEST_CASE("param store state dict round trip") {
  Rng rng(53);
  nn::ParamStore ps;
  nn::Linear fc(ps, "fc", 3, 2, rng);
  nn::Conv2d cv(ps, "cv", 1, 2, 3, 1, 1, rng);
  auto sd = ps.state_dict();
  CHECK(sd.size() == 4);

  nn::ParamStore ps2;
  Rng rng2(54);
  nn::Linear fc2(ps2, "fc", 3, 2, rng2);
  nn::Conv2d cv2(ps2, "cv", 1, 2, 3, 1, 1, rng2);
  ps2.load_state_dict(sd);
  CHECK(max_abs_diff(fc2.w->value, fc.w->value) == 0.0);

  nn::ParamStore ps3;
  nn::Linear fc3(ps3, "other", 3, 2, rng2);
  CHECK_THROWS_AS(ps3.load_state_dict(sd), FormatError);

  CHECK_THROWS_AS(ps.add("fc.w", Tensor({1})), ConfigError);
}

TEST_CASE("png writer emits a valid signature and chunks") {
  const std::string path = "/tmp/cemnet_test_img/out.png";
  std::vector<uint8_t> rgb(16 * 8 * 3);
  for (size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<uint8_t>(i);
  write_png(path, rgb, 16, 8);
  auto bytes = read_file_bytes(path);
  REQUIRE(bytes.size() > 40);
  const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  for (int i = 0; i < 8; ++i) CHECK(bytes[static_cast<size_t>(i)] == sig[i]);
  // IHDR width/height big-endian at fixed offsets.
  CHECK(bytes[16 + 3] == 16);
  CHECK(bytes[20 + 3] == 8);
  CHECK_THROWS_AS(write_png(path, rgb, 5, 5), InputError);
}
