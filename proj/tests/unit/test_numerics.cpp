#include <doctest.h>

#include <cmath>
#include <numeric>

#include "puicl/error.hpp"
#include "puicl/optim.hpp"
#include "support.hpp"

using namespace puicl;
using namespace puicl::test;

namespace {

AttentionWeights<double> random_attention(std::size_t e, Rng& rng, double scale = 0.5) {
  AttentionWeights<double> w;
  for (auto* t : {&w.q_weight, &w.k_weight, &w.v_weight, &w.o_weight}) *t = random_tensor({e, e}, rng, scale);
  for (auto* t : {&w.q_bias, &w.k_bias, &w.v_bias, &w.o_bias}) *t = random_tensor({e}, rng, scale);
  return w;
}

std::vector<Tensor64> attention_tensors(const AttentionWeights<double>& w) {
  return {w.q_weight, w.q_bias, w.k_weight, w.k_bias, w.v_weight, w.v_bias, w.o_weight, w.o_bias};
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("data length must match the shape") {
    CHECK_THROWS_AS(Tensor64(Shape{2, 3}, Buffer<double>(5)), ShapeError);
    const Tensor64 t(Shape{2, 3});
    CHECK(t.size() == 6);
    CHECK(t.extent(-1) == 3);
  }

  TEST_CASE("gradients accumulate across uses of a tensor") {
    auto x = constant({2}, {1.0, 2.0}, true);
    sum(add(x, x)).backward();
    CHECK(values(Tensor64(Shape{2}, Buffer<double>(x.grad().begin(), x.grad().end()))) == std::vector<double>{2, 2});
  }

  TEST_CASE("no tape is recorded under NoGradGuard") {
    auto x = constant({2}, {1.0, 2.0}, true);
    Tensor64 y;
    {
      NoGradGuard guard;
      y = scale(x, 3.0);
    }
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_SUITE("matmul") {
  TEST_CASE("identity, zero and hand-computed products") {
    const auto eye = constant({2, 2}, {1, 0, 0, 1});
    const auto m = constant({2, 2}, {1, 2, 3, 4});
    CHECK(values(matmul(eye, m)) == values(m));
    CHECK(values(matmul(eye, constant({2, 3}, {0, 0, 0, 0, 0, 0}))) == std::vector<double>(6, 0.0));
    CHECK(matmul(constant({1, 2}, {1, 2}), constant({2, 1}, {3, 4})).item() == 11.0);
  }

  TEST_CASE("shape mismatch reports both shapes") {
    try {
      matmul(constant({2, 3}, std::vector<double>(6)), constant({2, 3}, std::vector<double>(6)));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }

  TEST_CASE("batched product broadcasts the leading extent") {
    Rng rng(1);
    const auto a = random_tensor({3, 2, 4}, rng);
    const auto b = random_tensor({4, 5}, rng);
    const auto c = matmul(a, b);
    CHECK(c.shape() == Shape{3, 2, 5});
    const auto da = a.data(), db = b.data(), dc = c.data();
    double expect = 0;
    for (int k = 0; k < 4; ++k) expect += da[2 * 8 + 1 * 4 + k] * db[k * 5 + 3];
    CHECK(dc[2 * 10 + 1 * 5 + 3] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_SUITE("gelu") {
  TEST_CASE("origin, asymptote and erf oracle") {
    CHECK(gelu_value(0.0) == 0.0);
    CHECK(std::abs(gelu_value(10.0) - 10.0) < 1e-6);
    const double oracle = 0.5 * 1.0 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(std::abs(gelu_value(1.0) - oracle) < 1e-6);
    const auto t = gelu(constant({3}, {-1.0, 0.0, 1.0}));
    CHECK(std::abs(t.data()[2] - oracle) < 1e-12);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("hand examples") {
    const auto a = values(softmax(constant({2}, {0, 0}), 0));
    CHECK(a[0] == doctest::Approx(0.5));
    const auto b = values(softmax(constant({2}, {1000, 0}), 0));
    CHECK(std::abs(b[0] - 1.0) < 1e-6);
    CHECK(std::isfinite(b[1]));
    const auto c = values(softmax(constant({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), -1));
    for (int i = 0; i < 3; ++i) CHECK(c[i] == doctest::Approx((i + 1) / 6.0).epsilon(1e-12));
  }

  TEST_CASE("rows sum to one for inputs up to 1e3 in magnitude") {
    Rng rng(2);
    for (int axis : {0, 1, -1}) {
      const auto x = random_tensor({4, 6, 5}, rng, 1e3 / 3);
      const auto y = softmax(Tensor(x.shape(), Buffer<float>(x.data().begin(), x.data().end())), axis);
      const Shape& s = y.shape();
      const std::size_t ax = axis < 0 ? 2 : axis;
      std::size_t inner = 1;
      for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
      const std::size_t outer = y.size() / (s[ax] * inner);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          double total = 0;
          for (std::size_t k = 0; k < s[ax]; ++k) {
            const float v = y.data()[(o * s[ax] + k) * inner + in];
            CHECK(v >= 0.0f);
            total += v;
          }
          CHECK(std::abs(total - 1.0) < 1e-6);
        }
      }
    }
  }
}

TEST_SUITE("layer_norm") {
  TEST_CASE("hand examples") {
    const auto ones = constant({2}, {1, 1});
    const auto zeros = constant({2}, {0, 0});
    CHECK(values(layer_norm(constant({2}, {4, 4}), ones, zeros)) == std::vector<double>{0, 0});
    const auto y = values(layer_norm(constant({2}, {1, 3}), ones, zeros));
    CHECK(std::abs(y[0] + 1) < 1e-4);
    CHECK(std::abs(y[1] - 1) < 1e-4);
    const auto z = values(layer_norm(constant({2}, {-7, 2}), constant({2}, {0, 0}), constant({2}, {5, 5})));
    CHECK(z == std::vector<double>{5, 5});
  }

  TEST_CASE("normalized rows have zero mean and unit population variance") {
    Rng rng(3);
    const std::size_t e = 16;
    const auto x = random_tensor({10, e}, rng, 4.0);
    const auto y = layer_norm(x, constant({e}, std::vector<double>(e, 1.0)), constant({e}, std::vector<double>(e, 0.0)));
    for (std::size_t r = 0; r < 10; ++r) {
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < e; ++j) mean += y.data()[r * e + j];
      mean /= e;
      for (std::size_t j = 0; j < e; ++j) var += std::pow(y.data()[r * e + j] - mean, 2);
      var /= e;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(var - 1) < 1e-3);
    }
  }
}

TEST_SUITE("cross_entropy") {
  TEST_CASE("hand examples") {
    const std::vector<int> t0{0}, t1{1};
    CHECK(cross_entropy_with_logits(constant({1, 2}, {0, 0}), t0).item() == doctest::Approx(std::log(2.0)));
    CHECK(cross_entropy_with_logits(constant({1, 2}, {0, 0}), t1).item() == doctest::Approx(std::log(2.0)));
    CHECK(cross_entropy_with_logits(constant({1, 2}, {20, -20}), t0).item() < 1e-6);
    const std::vector<int> t{0, 1};
    const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(cross_entropy_with_logits(constant({2, 2}, {1, 0, 0, 1}), t).item() ==
          doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.3133).epsilon(1e-3));
  }

  TEST_CASE("no rows is an error") {
    const std::vector<int> none;
    CHECK_THROWS_AS(cross_entropy_with_logits(Tensor64(Shape{0, 2}), none), ShapeError);
  }
}

TEST_SUITE("attention") {
  TEST_CASE("one token attends only to itself") {
    Rng rng(4);
    const std::size_t e = 4;
    const auto w = random_attention(e, rng);
    const auto x = random_tensor({3, 1, e}, rng);
    const auto out = multi_head_attention(x, w, 2);
    const auto expect = linear(linear(x, w.v_weight, w.v_bias), w.o_weight, w.o_bias);
    const auto a = values(out), b = values(expect);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }

  TEST_CASE("two tokens, one head, e=2, against a step-by-step oracle") {
    AttentionWeights<double> w;
    w.q_weight = constant({2, 2}, {1.0, 0.5, -0.3, 0.8});
    w.k_weight = constant({2, 2}, {0.2, -1.0, 0.7, 0.4});
    w.v_weight = constant({2, 2}, {0.9, 0.1, -0.6, 1.2});
    w.o_weight = constant({2, 2}, {1.1, -0.2, 0.3, 0.5});
    w.q_bias = constant({2}, {0.1, -0.1});
    w.k_bias = constant({2}, {0.0, 0.2});
    w.v_bias = constant({2}, {-0.3, 0.05});
    w.o_bias = constant({2}, {0.01, 0.02});
    const double xs[2][2] = {{0.5, -1.5}, {2.0, 0.25}};
    const auto x = constant({1, 2, 2}, {xs[0][0], xs[0][1], xs[1][0], xs[1][1]});
    const auto out = values(multi_head_attention(x, w, 1));

    auto proj = [](const double* in, const Tensor64& wt, const Tensor64& b, double* o) {
      for (int j = 0; j < 2; ++j) o[j] = b.data()[j] + in[0] * wt.data()[0 * 2 + j] + in[1] * wt.data()[1 * 2 + j];
    };
    double q[2][2], k[2][2], v[2][2];
    for (int t = 0; t < 2; ++t) {
      proj(xs[t], w.q_weight, w.q_bias, q[t]);
      proj(xs[t], w.k_weight, w.k_bias, k[t]);
      proj(xs[t], w.v_weight, w.v_bias, v[t]);
    }
    for (int t = 0; t < 2; ++t) {
      double s[2];
      for (int u = 0; u < 2; ++u) s[u] = (q[t][0] * k[u][0] + q[t][1] * k[u][1]) / std::sqrt(2.0);
      const double m = std::max(s[0], s[1]);
      const double p0 = std::exp(s[0] - m), p1 = std::exp(s[1] - m);
      const double a0 = p0 / (p0 + p1), a1 = p1 / (p0 + p1);
      const double ctx[2] = {a0 * v[0][0] + a1 * v[1][0], a0 * v[0][1] + a1 * v[1][1]};
      double o[2];
      proj(ctx, w.o_weight, w.o_bias, o);
      CHECK(std::abs(out[t * 2 + 0] - o[0]) < 1e-5);
      CHECK(std::abs(out[t * 2 + 1] - o[1]) < 1e-5);
    }
  }

  TEST_CASE("permuting tokens permutes outputs") {
    Rng rng(5);
    const std::size_t e = 8, n = 7;
    const auto w = random_attention(e, rng);
    const auto x = random_tensor({2, n, e}, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Buffer<double> px(x.size());
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < e; ++j) px[(s * n + t) * e + j] = x.data()[(s * n + perm[t]) * e + j];
    const auto y = values(multi_head_attention(x, w, 4));
    const auto py = values(multi_head_attention(Tensor64(x.shape(), px), w, 4));
    double worst = 0;
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < e; ++j)
          worst = std::max(worst, std::abs(py[(s * n + t) * e + j] - y[(s * n + perm[t]) * e + j]));
    CHECK(worst < 1e-6);
  }

  TEST_CASE("no mask: attention weights are finite and positive") {
    Rng rng(6);
    const std::size_t e = 4;
    const auto w = random_attention(e, rng);
    AttentionProbe<double> probe;
    multi_head_attention(random_tensor({2, 5, e}, rng), w, 2, &probe);
    CHECK(probe.weights.size() == 2 * 2 * 5 * 5);
    for (double v : probe.scores) CHECK(std::isfinite(v));
    for (double v : probe.weights) CHECK(v > 0.0);
  }

  TEST_CASE("embedding size must divide by heads") {
    Rng rng(7);
    const auto w = random_attention(6, rng);
    CHECK_THROWS_AS(multi_head_attention(random_tensor({1, 2, 6}, rng), w, 4), ConfigError);
  }
}

TEST_SUITE("gradients") {
  constexpr double kTol = 1e-4;

  TEST_CASE("matmul and linear") {
    Rng rng(10);
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng);
    CHECK(gradient_error({a, b}, [&] { return weighted_sum(matmul(a, b)); }) < kTol);
    auto x = random_tensor({3, 2, 4}, rng), w = random_tensor({4, 3}, rng), bias = random_tensor({3}, rng);
    CHECK(gradient_error({x, w, bias}, [&] { return weighted_sum(linear(x, w, bias)); }) < kTol);
  }

  TEST_CASE("elementwise ops") {
    Rng rng(11);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    CHECK(gradient_error({a, b}, [&] { return weighted_sum(add(a, b)); }) < kTol);
    CHECK(gradient_error({a, b}, [&] { return weighted_sum(mul(a, b)); }) < kTol);
    CHECK(gradient_error({a}, [&] { return weighted_sum(scale(a, 2.5)); }) < kTol);
    CHECK(gradient_error({a}, [&] { return weighted_sum(gelu(a)); }) < kTol);
  }

  TEST_CASE("softmax along each axis") {
    Rng rng(12);
    auto x = random_tensor({3, 4, 5}, rng);
    for (int axis : {0, 1, 2}) {
      CHECK(gradient_error({x}, [&] { return weighted_sum(softmax(x, axis)); }) < kTol);
    }
  }

  TEST_CASE("layer_norm") {
    Rng rng(13);
    auto x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    CHECK(gradient_error({x, g, b}, [&] { return weighted_sum(layer_norm(x, g, b)); }) < kTol);
  }

  TEST_CASE("cross entropy") {
    Rng rng(14);
    auto z = random_tensor({5, 2}, rng);
    const std::vector<int> t{0, 1, 1, 0, 1};
    CHECK(gradient_error({z}, [&] { return cross_entropy_with_logits(z, t); }) < kTol);
  }

  TEST_CASE("reshape and transpose12") {
    Rng rng(15);
    auto x = random_tensor({2, 3, 4, 2}, rng);
    CHECK(gradient_error({x}, [&] { return weighted_sum(transpose12(x)); }) < kTol);
    CHECK(gradient_error({x}, [&] { return weighted_sum(reshape(x, Shape{6, 8})); }) < kTol);
  }

  TEST_CASE("multi-head attention") {
    Rng rng(16);
    const std::size_t e = 4;
    auto w = random_attention(e, rng);
    auto x = random_tensor({2, 3, e}, rng);
    auto inputs = attention_tensors(w);
    inputs.push_back(x);
    CHECK(gradient_error(inputs, [&] { return weighted_sum(multi_head_attention(x, w, 2)); }) < kTol);
  }

  TEST_CASE("long sequences take the blocked path") {
    Rng rng(17);
    const std::size_t e = 4;
    auto w = random_attention(e, rng, 0.3);
    auto x = random_tensor({1, 40, e}, rng);
    auto inputs = attention_tensors(w);
    inputs.push_back(x);
    CHECK(gradient_error(inputs, [&] { return weighted_sum(multi_head_attention(x, w, 2)); }) < kTol);
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("clip examples and idempotence") {
    std::vector<Tensor> p{Tensor(Shape{2}, true)};
    auto set_grad = [&](float a, float b) {
      p[0].zero_grad();
      auto g = p[0].mutable_grad();
      g[0] = a;
      g[1] = b;
    };
    set_grad(2, 0);
    CHECK(clip_global_norm<float>(p, 1.0) == doctest::Approx(0.5));
    CHECK(p[0].grad()[0] == doctest::Approx(1.0));
    set_grad(0.3f, 0);
    CHECK(clip_global_norm<float>(p, 1.0) == 1.0);
    CHECK(p[0].grad()[0] == doctest::Approx(0.3));
    set_grad(3, 4);
    clip_global_norm<float>(p, 1.0);
    CHECK(p[0].grad()[0] == doctest::Approx(0.6));
    CHECK(p[0].grad()[1] == doctest::Approx(0.8));
    const std::vector<float> once(p[0].grad().begin(), p[0].grad().end());
    clip_global_norm<float>(p, 1.0);
    CHECK(std::vector<float>(p[0].grad().begin(), p[0].grad().end()) == once);
  }

  TEST_CASE("adamw: zero gradient only decays") {
    std::vector<Tensor64> p{constant({1}, {2.0}, true)};
    auto st = AdamWState<double>::zeros_like(p);
    adamw_step<double>(p, st, 0.1);
    CHECK(p[0].data()[0] == doctest::Approx(2.0 * (1 - 0.1 * 1e-4)).epsilon(1e-15));
    CHECK(st.step_count == 1);
  }

  TEST_CASE("adamw: first step moves by about -lr") {
    std::vector<Tensor64> p{constant({1}, {0.0}, true)};
    p[0].mutable_grad()[0] = 1.0;
    auto st = AdamWState<double>::zeros_like(p);
    AdamWConfig cfg;
    cfg.weight_decay = 0;
    adamw_step<double>(p, st, 0.01, cfg);
    CHECK(p[0].data()[0] == doctest::Approx(-0.01 / (1 + 1e-8)).epsilon(1e-12));
  }

  TEST_CASE("adamw matches a 64-bit replay over several steps") {
    const std::vector<double> grads{0.5, -1.0, 2.0, 0.1};
    std::vector<Tensor64> p{constant({1}, {1.0}, true)};
    auto st = AdamWState<double>::zeros_like(p);
    double theta = 1.0, m = 0, v = 0;
    const double lr = 0.05, b1 = 0.9, b2 = 0.95, wd = 1e-4, eps = 1e-8;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
      p[0].mutable_grad()[0] = grads[t - 1];
      adamw_step<double>(p, st, lr);
      m = b1 * m + (1 - b1) * grads[t - 1];
      v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      theta = theta * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);
      CHECK(p[0].data()[0] == doctest::Approx(theta).epsilon(1e-13));
    }
    CHECK(st.step_count == 4);
  }

  TEST_CASE("non-positive learning rate is rejected") {
    std::vector<Tensor64> p{constant({1}, {0.0}, true)};
    auto st = AdamWState<double>::zeros_like(p);
    CHECK_THROWS_AS(adamw_step<double>(p, st, 0.0), ConfigError);
  }

  TEST_CASE("ema formula") {
    std::vector<Tensor64> ema{constant({1}, {0.0})}, live{constant({1}, {1.0})};
    ema_update<double>(ema, live, 0.95);
    CHECK(ema[0].data()[0] == doctest::Approx(0.05));
    for (int k = 2; k <= 10; ++k) {
      ema_update<double>(ema, live, 0.95);
      CHECK(ema[0].data()[0] == doctest::Approx(1 - std::pow(0.95, k)).epsilon(1e-12));
    }
    std::vector<Tensor64> same{constant({2}, {3.0, -1.0})};
    ema_update<double>(same, same, 0.95);
    CHECK(values(same[0]) == std::vector<double>{3.0, -1.0});
  }

  TEST_CASE("ema equals the geometric average of the live history") {
    const std::vector<double> history{0.3, -0.2, 1.5, 0.7, 0.0, 2.0, -1.0, 0.4, 0.9, 1.1};
    std::vector<Tensor64> ema{constant({1}, {0.5})};
    for (double h : history) {
      std::vector<Tensor64> live{constant({1}, {h})};
      ema_update<double>(ema, live, 0.95);
    }
    const std::size_t k = history.size();
    double expect = std::pow(0.95, k) * 0.5;
    for (std::size_t i = 0; i < k; ++i) expect += 0.05 * std::pow(0.95, k - 1 - i) * history[i];
    CHECK(ema[0].data()[0] == doctest::Approx(expect).epsilon(1e-12));
  }
}
