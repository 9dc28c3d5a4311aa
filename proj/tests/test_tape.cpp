#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "kalm/rng.hpp"
#include "kalm/tape.hpp"

using namespace kalm;

static Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t = shape.size() == 1 ? Tensor::zeros(shape[0]) : Tensor::zeros(shape[0], shape[1]);
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Max relative error between the tape gradient of f(p) and central finite
// differences, where f builds a scalar loss from a single parameter leaf.
static double fd_max_rel_error(const std::function<VarId(Tape&, VarId)>& f, Tensor p) {
  Tensor grad = p;
  for (size_t i = 0; i < grad.size(); ++i) grad[i] = 0.0;
  {
    Tape tape;
    VarId x = tape.param(&p, &grad);
    tape.backward(f(tape, x));
  }
  auto eval = [&](const Tensor& q) {
    Tape tape;
    Tensor local = q;
    VarId x = tape.param(&local, nullptr);
    return tape.value(f(tape, x))[0];
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    Tensor plus = p, minus = p;
    plus[i] += h;
    minus[i] -= h;
    double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
    // Floor the denominator at the FD noise scale so near-zero gradients
    // are not compared against pure roundoff.
    double denom = std::max({std::fabs(grad[i]), std::fabs(numeric), 1e-5});
    worst = std::max(worst, std::fabs(grad[i] - numeric) / denom);
  }
  return worst;
}

TEST_CASE("log_softmax of a uniform vector") {
  Tape tape;
  VarId x = tape.input(Tensor({3}, {0.0, 0.0, 0.0}));
  const Tensor& ls = tape.value(tape.log_softmax(x));
  for (size_t i = 0; i < 3; ++i) CHECK(ls[i] == doctest::Approx(std::log(1.0 / 3.0)));
}

TEST_CASE("log_softmax survives large logits") {
  Tape tape;
  VarId x = tape.input(Tensor({2}, {1000.0, 1000.0}));
  const Tensor& ls = tape.value(tape.log_softmax(x));
  CHECK(std::isfinite(ls[0]));
  CHECK(std::exp(ls[0]) == doctest::Approx(0.5));
}

TEST_CASE("log_softmax shift invariance") {
  Rng rng(3);
  for (int it = 0; it < 100; ++it) {
    size_t n = 2 + rng.below(8);
    Tensor a = random_tensor({n}, rng, -5.0, 5.0);
    Tensor b = a;
    double c = rng.uniform(-100.0, 100.0);
    for (size_t i = 0; i < n; ++i) b[i] += c;
    Tape tape;
    Tensor la = tape.value(tape.log_softmax(tape.input(a)));  // copy: the next
    Tensor lb = tape.value(tape.log_softmax(tape.input(b)));  // call may realloc
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      CHECK(la[i] == doctest::Approx(lb[i]).epsilon(1e-9));
      total += std::exp(la[i]);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("single-element log_softmax and logsumexp are exact") {
  Tape tape;
  VarId x = tape.input(Tensor({1}, {-3.7214}));
  CHECK(tape.value(tape.log_softmax(x))[0] == 0.0);
  CHECK(tape.value(tape.logsumexp(x))[0] == -3.7214);
}

TEST_CASE("logsumexp matches direct evaluation") {
  Tape tape;
  VarId x = tape.input(Tensor({3}, {1.0, 2.0, 3.0}));
  double direct = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(tape.value(tape.logsumexp(x))[0] == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("backward of sum is ones") {
  Tensor p({4}, {1.0, -2.0, 0.5, 3.0});
  Tensor g = Tensor::zeros(4);
  Tape tape;
  VarId x = tape.param(&p, &g);
  tape.backward(tape.sum(x));
  for (size_t i = 0; i < 4; ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("d(x*x)/dx at 3 is 6") {
  Tensor p({1}, {3.0});
  Tensor g = Tensor::zeros(1);
  Tape tape;
  VarId x = tape.param(&p, &g);
  tape.backward(tape.sum(tape.mul(x, x)));
  CHECK(g[0] == doctest::Approx(6.0));
}

TEST_CASE("gradients accumulate across reuse") {
  // loss = sum(x) + sum(x) -> grad 2 everywhere
  Tensor p({3}, {0.1, 0.2, 0.3});
  Tensor g = Tensor::zeros(3);
  Tape tape;
  VarId x = tape.param(&p, &g);
  tape.backward(tape.add(tape.sum(x), tape.sum(x)));
  for (size_t i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(2.0));
}

TEST_CASE("primitive gradients match finite differences") {
  Rng rng(7);
  for (int it = 0; it < 100; ++it) {
    size_t n = 2 + rng.below(5);
    Tensor p = random_tensor({n}, rng);
    size_t pick_i = rng.below(n);
    auto f = [pick_i](Tape& t, VarId x) {
      VarId s = t.sigmoid(x);
      VarId th = t.tanh(t.scale(x, 0.7));
      VarId m = t.mul(s, th);
      VarId ls = t.log_softmax(t.add(m, x));
      VarId parts = t.stack({t.sum(t.square(m)), t.logsumexp(x), t.pick(ls, pick_i),
                             t.mean(t.exp(t.scale(x, 0.3)))});
      return t.sum(parts);
    };
    CHECK(fd_max_rel_error(f, p) < 1e-5);
  }
}

TEST_CASE("matvec and structural op gradients match finite differences") {
  Rng rng(8);
  for (int it = 0; it < 30; ++it) {
    size_t m = 2 + rng.below(4), n = 2 + rng.below(4);
    Tensor W = random_tensor({m, n}, rng);
    Tensor x = random_tensor({n}, rng);
    // Check d/dW with x fixed.
    auto fw = [&x, m](Tape& t, VarId Wv) {
      VarId y = t.matvec(Wv, t.input(x));
      VarId yr = t.matvec_rows(Wv, m - 1, t.input(x));
      VarId sl = t.slice(t.row(Wv, 0), 0, 1);
      return t.sum(t.stack(
          {t.sum(t.tanh(y)), t.sum(t.square(yr)), t.sum(sl), t.sum(t.matvec_transpose(Wv, y))}));
    };
    CHECK(fd_max_rel_error(fw, W) < 1e-5);
    // Check d/dx with W fixed.
    auto fx = [&W](Tape& t, VarId xv) {
      VarId y = t.matvec(t.input(W), xv);
      VarId c = t.concat(xv, y);
      return t.add(t.sum(t.sigmoid(c)), t.mean(t.square(y)));
    };
    CHECK(fd_max_rel_error(fx, x) < 1e-5);
  }
}

TEST_CASE("smul and cmul gradients match finite differences") {
  Rng rng(9);
  for (int it = 0; it < 30; ++it) {
    size_t n = 3 + rng.below(4);
    Tensor p = random_tensor({n + 1}, rng);
    Tensor mask = random_tensor({n}, rng, 0.0, 2.0);
    auto f = [n, &mask](Tape& t, VarId all) {
      VarId v = t.slice(all, 0, n);
      VarId s = t.pick(all, n);
      return t.sum(t.square(t.cmul(t.smul(v, s), mask)));
    };
    CHECK(fd_max_rel_error(f, p) < 1e-5);
  }
}

// Plain-loop LSTM step, kept deliberately independent of the tape code.
static void lstm_oracle(const Tensor& Wx, const Tensor& Wh, const Tensor& b,
                        const std::vector<double>& h, const std::vector<double>& c,
                        const std::vector<double>& x, std::vector<double>& h_out,
                        std::vector<double>& c_out) {
  size_t H = h.size(), I = x.size();
  auto gate = [&](size_t g, size_t u) {
    double s = b[g * H + u];
    for (size_t k = 0; k < I; ++k) s += Wx(g * H + u, k) * x[k];
    for (size_t k = 0; k < H; ++k) s += Wh(g * H + u, k) * h[k];
    return s;
  };
  for (size_t u = 0; u < H; ++u) {
    double i = 1.0 / (1.0 + std::exp(-gate(0, u)));
    double f = 1.0 / (1.0 + std::exp(-gate(1, u)));
    double g = std::tanh(gate(2, u));
    double o = 1.0 / (1.0 + std::exp(-gate(3, u)));
    c_out[u] = f * c[u] + i * g;
    h_out[u] = o * std::tanh(c_out[u]);
  }
}

TEST_CASE("lstm_step with zero weights and zero state is zero") {
  size_t H = 3, I = 2;
  Tape tape;
  VarId Wx = tape.input(Tensor::zeros(4 * H, I));
  VarId Wh = tape.input(Tensor::zeros(4 * H, H));
  VarId b = tape.input(Tensor::zeros(4 * H));
  VarId h0 = tape.input(Tensor::zeros(H));
  VarId c0 = tape.input(Tensor::zeros(H));
  VarId x = tape.input(Tensor({2}, {1.0, -1.0}));
  auto out = lstm_step(tape, Wx, Wh, b, h0, c0, x);
  for (size_t u = 0; u < H; ++u) {
    CHECK(tape.value(out.hidden)[u] == 0.0);
    CHECK(tape.value(out.cell)[u] == 0.0);
  }
}

TEST_CASE("lstm_step zero weights halve the previous cell") {
  // All gates sigmoid(0) = 1/2; candidate tanh(0) = 0.
  size_t H = 2, I = 2;
  Tape tape;
  VarId Wx = tape.input(Tensor::zeros(4 * H, I));
  VarId Wh = tape.input(Tensor::zeros(4 * H, H));
  VarId b = tape.input(Tensor::zeros(4 * H));
  VarId h0 = tape.input(Tensor({2}, {0.3, -0.8}));
  Tensor c_prev({2}, {1.0, -2.0});
  VarId c0 = tape.input(c_prev);
  VarId x = tape.input(Tensor({2}, {5.0, -5.0}));
  auto out = lstm_step(tape, Wx, Wh, b, h0, c0, x);
  for (size_t u = 0; u < H; ++u) {
    CHECK(tape.value(out.cell)[u] == doctest::Approx(0.5 * c_prev[u]));
    CHECK(tape.value(out.hidden)[u] == doctest::Approx(0.5 * std::tanh(0.5 * c_prev[u])));
  }
}

TEST_CASE("lstm_step matches the scalar oracle") {
  Rng rng(21);
  for (int it = 0; it < 20; ++it) {
    size_t H = 2 + rng.below(4), I = 2 + rng.below(4);
    Tensor Wx = random_tensor({4 * H, I}, rng);
    Tensor Wh = random_tensor({4 * H, H}, rng);
    Tensor b = random_tensor({4 * H}, rng);
    Tensor h0 = random_tensor({H}, rng);
    Tensor c0 = random_tensor({H}, rng);
    Tensor x = random_tensor({I}, rng);
    Tape tape;
    auto out = lstm_step(tape, tape.input(Wx), tape.input(Wh), tape.input(b), tape.input(h0),
                         tape.input(c0), tape.input(x));
    std::vector<double> h(h0.data(), h0.data() + H), c(c0.data(), c0.data() + H),
        xin(x.data(), x.data() + I), ho(H), co(H);
    lstm_oracle(Wx, Wh, b, h, c, xin, ho, co);
    for (size_t u = 0; u < H; ++u) {
      CHECK(tape.value(out.hidden)[u] == doctest::Approx(ho[u]).epsilon(1e-12));
      CHECK(tape.value(out.cell)[u] == doctest::Approx(co[u]).epsilon(1e-12));
    }
  }
}

TEST_CASE("lstm_step gradients match finite differences") {
  Rng rng(22);
  size_t H = 3, I = 2;
  for (int it = 0; it < 10; ++it) {
    Tensor Wx = random_tensor({4 * H, I}, rng);
    Tensor h0 = random_tensor({H}, rng);
    Tensor c0 = random_tensor({H}, rng);
    Tensor x = random_tensor({I}, rng);
    Tensor Wh = random_tensor({4 * H, H}, rng);
    Tensor b = random_tensor({4 * H}, rng);
    auto f = [&](Tape& t, VarId Whv) {
      auto o1 = lstm_step(t, t.input(Wx), Whv, t.input(b), t.input(h0), t.input(c0), t.input(x));
      auto o2 = lstm_step(t, t.input(Wx), Whv, t.input(b), o1.hidden, o1.cell, t.input(x));
      return t.add(t.sum(t.square(o2.hidden)), t.sum(o2.cell));
    };
    CHECK(fd_max_rel_error(f, Wh) < 1e-5);
  }
}

TEST_CASE("two-step unrolled chain gradient") {
  // loss = tanh(sigmoid(w))^2 has derivative 2 tanh(s) (1 - tanh(s)^2) s (1 - s).
  Tensor p({1}, {0.4});
  Tensor g = Tensor::zeros(1);
  Tape tape;
  VarId w = tape.param(&p, &g);
  tape.backward(tape.sum(tape.square(tape.tanh(tape.sigmoid(w)))));
  double s = 1.0 / (1.0 + std::exp(-0.4));
  double th = std::tanh(s);
  CHECK(g[0] == doctest::Approx(2.0 * th * (1.0 - th * th) * s * (1.0 - s)).epsilon(1e-12));
}
