#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <map>

#include "grammarscope/adam.hpp"
#include "grammarscope/tape.hpp"
#include "grammarscope/weights.hpp"
#include "testutil.hpp"

using grammarscope::Error;
using grammarscope::Rng;
using namespace grammarscope::num;
using testutil::max_grad_rel_err;
using testutil::random_array;
using testutil::rel_err;

TEST_CASE("matmul by identity returns the vector") {
  Tape tape;
  const int eye = tape.input("I", DenseArray({2, 2}, {1, 0, 0, 1}));
  const int v = tape.input("v", DenseArray({2, 1}, {3, -1}));
  const int out = tape.matmul(eye, v);
  const DenseArray& r = tape.forward(out);
  CHECK(r.data[0] == doctest::Approx(3.f));
  CHECK(r.data[1] == doctest::Approx(-1.f));
}

TEST_CASE("softmax of equal logits is uniform and rows sum to one") {
  Tape tape;
  const int x = tape.input("x", DenseArray({1, 2}, {0, 0}));
  const int out = tape.softmax(x);
  const DenseArray& r = tape.forward(out);
  CHECK(r.data[0] == doctest::Approx(0.5f));
  CHECK(r.data[1] == doctest::Approx(0.5f));

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t2;
    const int rows = 1 + rng.uniform_int(5), cols = 1 + rng.uniform_int(6);
    const int in = t2.input("x", random_array<float>({rows, cols}, rng, -8, 8));
    const DenseArray& sm = t2.forward(t2.softmax(in));
    for (int rr = 0; rr < rows; ++rr) {
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        CHECK(sm.at(rr, c) >= 0.f);
        sum += sm.at(rr, c);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("tanh matches extended-precision scalar evaluation") {
  Tape tape;
  const int x = tape.input("x", DenseArray({1, 2}, {0.5f, -0.5f}));
  const DenseArray& r = tape.forward(tape.tanh(x));
  // oracle: mpmath tanh(0.5) = 0.46211715726000976
  CHECK(rel_err(r.data[0], 0.46211715726000976) < 1e-6);
  CHECK(rel_err(r.data[1], -0.46211715726000976) < 1e-6);
}

TEST_CASE("backward of sum-of-squares and mean") {
  Tape tape;
  const int v = tape.param("v", DenseArray({1, 2}, {1, 2}));
  const int loss = tape.sum_squares(v);
  tape.forward(loss);
  tape.backward(loss);
  CHECK(tape.grad(v).data[0] == doctest::Approx(2.f));
  CHECK(tape.grad(v).data[1] == doctest::Approx(4.f));

  Tape t2;
  const int w = t2.param("w", DenseArray({1, 4}, {1, 2, 3, 4}));
  const int m = t2.mean(w);
  t2.forward(m);
  t2.backward(m);
  for (int i = 0; i < 4; ++i) CHECK(t2.grad(w).data[i] == doctest::Approx(0.25f));
}

TEST_CASE("backward before forward and non-scalar root are errors") {
  Tape tape;
  const int v = tape.param("v", DenseArray({1, 2}, {1, 2}));
  const int s = tape.sum_squares(v);
  CHECK_THROWS_AS(tape.backward(s), Error);
  const int t = tape.tanh(v);
  tape.forward(t);
  CHECK_THROWS_AS(tape.backward(t), Error);
}

TEST_CASE("dimension mismatch errors name the offending node") {
  Tape tape;
  const int a = tape.input("a", DenseArray({2, 3}));
  const int b = tape.input("b", DenseArray({2, 3}));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"), Error);
  const int c = tape.input("c", DenseArray({4, 3}));
  CHECK_THROWS_AS(tape.add(a, c), Error);
  CHECK_THROWS_AS(tape.concat(a, c, 1), Error);
  CHECK_THROWS_AS(tape.slice(a, 1, 2, 2), Error);
}

TEST_CASE("forward is pure: identical reruns are bit-identical") {
  Rng rng(11);
  Tape tape;
  const int x = tape.input("x", random_array<float>({3, 4}, rng));
  const int w = tape.param("w", random_array<float>({4, 5}, rng));
  const int out = tape.softmax(tape.tanh(tape.matmul(x, w)));
  const DenseArray first = tape.forward(out);
  const DenseArray second = tape.forward(out);
  CHECK(first.data == second.data);
}

// Every differentiable op-kind against central finite differences on
// randomized inputs (fixed seed, 100 trials, eps 1e-3, rel err < 1e-4).
TEST_CASE("per-op gradients match finite differences") {
  Rng rng(1234);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + rng.uniform_int(4);
    const int k = 1 + rng.uniform_int(4);
    const int n = 1 + rng.uniform_int(4);
    const int which = trial % 10;
    Tape64 tape;
    int loss = -1;
    switch (which) {
      case 0: {  // matmul
        const int a = tape.param("a", random_array<double>({m, k}, rng));
        const int b = tape.param("b", random_array<double>({k, n}, rng));
        loss = tape.sum_squares(tape.matmul(a, b));
        break;
      }
      case 1: {  // add (same dims)
        const int a = tape.param("a", random_array<double>({m, n}, rng));
        const int b = tape.param("b", random_array<double>({m, n}, rng));
        loss = tape.sum_squares(tape.add(a, b));
        break;
      }
      case 2: {  // add (row broadcast) and scalar broadcast
        const int a = tape.param("a", random_array<double>({m, n}, rng));
        const int b = tape.param("b", random_array<double>({1, n}, rng));
        const int s = tape.param("s", random_array<double>({1}, rng));
        loss = tape.sum_squares(tape.add(tape.add(a, b), s));
        break;
      }
      case 3: {  // multiply (same dims + scalar)
        const int a = tape.param("a", random_array<double>({m, n}, rng));
        const int b = tape.param("b", random_array<double>({m, n}, rng));
        const int s = tape.param("s", random_array<double>({1}, rng));
        loss = tape.sum_squares(tape.multiply(tape.multiply(a, b), s));
        break;
      }
      case 4: {  // tanh
        const int a = tape.param("a", random_array<double>({m, n}, rng, -2, 2));
        loss = tape.sum_squares(tape.tanh(a));
        break;
      }
      case 5: {  // sigmoid
        const int a = tape.param("a", random_array<double>({m, n}, rng, -2, 2));
        loss = tape.sum_squares(tape.sigmoid(a));
        break;
      }
      case 6: {  // softmax (through a further nonlinear reduction)
        const int a = tape.param("a", random_array<double>({m, n}, rng, -2, 2));
        loss = tape.sum_squares(tape.softmax(a));
        break;
      }
      case 7: {  // log (positive domain via sigmoid)
        const int a = tape.param("a", random_array<double>({m, n}, rng, -2, 2));
        loss = tape.sum_squares(tape.log(tape.sigmoid(a)));
        break;
      }
      case 8: {  // concat on both axes, slice on both axes
        const int a = tape.param("a", random_array<double>({m, n}, rng));
        const int b = tape.param("b", random_array<double>({m, 2}, rng));
        const int cat1 = tape.concat(a, b, 1);          // {m, n+2}
        const int sl1 = tape.slice(cat1, 1, 1, n + 2);  // {m, n+1}
        const int cat0 = tape.concat(sl1, sl1, 0);      // {2m, n+1}
        const int sl0 = tape.slice(cat0, 0, 0, m);      // {m, n+1}
        loss = tape.sum_squares(sl0);
        break;
      }
      default: {  // mean
        const int a = tape.param("a", random_array<double>({m, n}, rng));
        loss = tape.mean(tape.multiply(a, a));
        break;
      }
    }
    worst = std::max(worst, max_grad_rel_err(tape, loss));
  }
  CHECK(worst < 1e-4);
}

// Single bi-LSTM step (gates, cell, projection, squared loss) against finite
// differences over every parameter.
TEST_CASE("bi-LSTM step loss gradient matches finite differences") {
  Rng rng(99);
  const int input = 6, hidden = 5, classes = 3, batch = 2;
  Tape64 tape;
  const int x = tape.input("x", random_array<double>({batch, input}, rng));
  const int h0 = tape.input("h0", random_array<double>({batch, hidden}, rng, -0.5, 0.5));
  const int c0 = tape.input("c0", random_array<double>({batch, hidden}, rng, -0.5, 0.5));
  const int neg_target = tape.input("t", random_array<double>({batch, classes}, rng));

  auto gate_param = [&](const char* name) {
    return tape.param(name, random_array<double>({input + hidden, hidden}, rng, -0.4, 0.4));
  };
  auto bias_param = [&](const char* name) {
    return tape.param(name, random_array<double>({1, hidden}, rng, -0.2, 0.2));
  };
  const int wi = gate_param("W_i"), wf = gate_param("W_f"), wg = gate_param("W_g"),
            wo = gate_param("W_o");
  const int bi = bias_param("b_i"), bf = bias_param("b_f"), bg = bias_param("b_g"),
            bo = bias_param("b_o");
  const int pw = tape.param("proj_w", random_array<double>({hidden, classes}, rng, -0.4, 0.4));
  const int pb = tape.param("proj_b", random_array<double>({1, classes}, rng, -0.2, 0.2));

  const int z = tape.concat(x, h0);
  const int gi = tape.sigmoid(tape.add(tape.matmul(z, wi), bi));
  const int gf = tape.sigmoid(tape.add(tape.matmul(z, wf), bf));
  const int gg = tape.tanh(tape.add(tape.matmul(z, wg), bg));
  const int go = tape.sigmoid(tape.add(tape.matmul(z, wo), bo));
  const int c1 = tape.add(tape.multiply(gf, c0), tape.multiply(gi, gg));
  const int h1 = tape.multiply(go, tape.tanh(c1));
  const int pred = tape.add(tape.matmul(h1, pw), pb);
  const int loss = tape.sum_squares(tape.add(pred, neg_target));

  CHECK(max_grad_rel_err(tape, loss) < 1e-4);
}

TEST_CASE("float and double tapes agree at float tolerance") {
  Rng rng(3);
  const DenseArray a32 = random_array<float>({4, 6}, rng);
  const DenseArray w32 = random_array<float>({6, 3}, rng);
  Tape tf;
  const int loss_f = tf.sum_squares(tf.softmax(tf.matmul(tf.input("a", a32), tf.param("w", w32))));
  Tape64 td;
  const int loss_d = td.sum_squares(
      td.softmax(td.matmul(td.input("a", a32.cast<double>()), td.param("w", w32.cast<double>()))));
  CHECK(rel_err(tf.forward(loss_f).data[0], td.forward(loss_d).data[0]) < 1e-5);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  DenseArray param({2, 2}, {1, -2, 3, -4});
  const DenseArray before = param;
  DenseArray grad({2, 2});
  OptimizerState state;
  const AdamConfig cfg;
  for (int step = 0; step < 3; ++step) adam_step(param, grad, state, cfg);
  CHECK(param.data == before.data);
  CHECK(state.step == 3);
}

TEST_CASE("adam: single bias-corrected step matches hand evaluation") {
  DenseArray param({1}, {0.f});
  DenseArray grad({1}, {1.f});
  OptimizerState state;
  adam_step(param, grad, state, {1e-4f, 0.9f, 0.999f, 1e-8f});
  // oracle: -lr * mhat / (sqrt(vhat) + eps) = -9.99999990e-05
  CHECK(rel_err(param.data[0], -9.9999999e-5) < 1e-6);
}

TEST_CASE("adam: two steps with analytic gradient reduce a convex quadratic") {
  DenseArray x({1}, {1.f});
  OptimizerState state;
  const AdamConfig cfg{1e-2f, 0.9f, 0.999f, 1e-8f};
  auto loss = [&] { return static_cast<double>(x.data[0]) * x.data[0]; };
  const double initial = loss();
  for (int step = 0; step < 2; ++step) {
    DenseArray grad({1}, {2.f * x.data[0]});
    adam_step(x, grad, state, cfg);
  }
  CHECK(loss() < initial);
}

TEST_CASE("adam: dimension mismatch is an error") {
  DenseArray param({2});
  DenseArray grad({3});
  OptimizerState state;
  CHECK_THROWS_AS(adam_step(param, grad, state, AdamConfig{}), Error);
}

TEST_CASE("weight container round-trips bit-exactly and rejects corruption") {
  testutil::TempDir tmp("weights");
  Rng rng(5);
  std::map<std::string, DenseArray> arrays;
  arrays["alpha"] = random_array<float>({3, 4}, rng);
  arrays["beta/gamma"] = random_array<float>({2, 2, 5}, rng);
  const std::string path = tmp.sub("w.igwt");
  save_weights(path, arrays);
  const auto loaded = load_weights(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("alpha").dims == arrays.at("alpha").dims);
  CHECK(loaded.at("alpha").data == arrays.at("alpha").data);
  CHECK(loaded.at("beta/gamma").data == arrays.at("beta/gamma").data);

  {  // truncated payload
    std::ofstream os(tmp.sub("trunc.igwt"), std::ios::binary);
    std::ifstream is(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), {});
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  CHECK_THROWS_AS(load_weights(tmp.sub("trunc.igwt")), Error);

  {  // bad magic
    std::ofstream os(tmp.sub("bad.igwt"), std::ios::binary);
    os << "NOPE1234";
  }
  CHECK_THROWS_AS(load_weights(tmp.sub("bad.igwt")), Error);
}
