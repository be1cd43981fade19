#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dara/gradcheck.hpp"
#include "dara/rng.hpp"
#include "dara/tensor.hpp"

using namespace dara;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

bool same_values(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

TEST_CASE("matmul forward") {
  SUBCASE("identity") {
    Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    Tensor out = matmul(id, m);
    CHECK(same_values(out.data(), m.data()));
  }
  SUBCASE("hand arithmetic") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {5, 6});
    Tensor out = matmul(a, b);
    CHECK(out.at(0) == doctest::Approx(17).epsilon(0));
    CHECK(out.at(1) == doctest::Approx(39).epsilon(0));
  }
  SUBCASE("dimension error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
  }
}

TEST_CASE("matmul backward accumulates dA = G.B^T and dB = A^T.G") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum_all(matmul(a, b));
    tape.backward(loss);
  }
  // G is all ones: dA[i][l] = sum_j B[l][j]; dB[l][j] = sum_i A[i][l].
  CHECK(a.grad()[0] == 11.0);
  CHECK(a.grad()[1] == 15.0);
  CHECK(a.grad()[2] == 11.0);
  CHECK(a.grad()[3] == 15.0);
  CHECK(b.grad()[0] == 4.0);
  CHECK(b.grad()[1] == 4.0);
  CHECK(b.grad()[2] == 6.0);
  CHECK(b.grad()[3] == 6.0);
}

TEST_CASE("relu") {
  SUBCASE("sign cases") {
    Tensor x = Tensor::from_data({3}, {-1, 0, 2});
    Tensor y = relu(x);
    CHECK(y.at(0) == 0.0);
    CHECK(y.at(1) == 0.0);
    CHECK(y.at(2) == 2.0);
  }
  SUBCASE("all-positive unchanged") {
    Tensor x = Tensor::from_data({4}, {0.5, 1, 2, 3});
    CHECK(same_values(relu(x).data(), x.data()));
  }
  SUBCASE("backward gate") {
    Tensor x = Tensor::from_data({2}, {-1, 2}, true);
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = sum_all(relu(x));  // upstream of ones
      tape.backward(loss);
    }
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
  }
}

TEST_CASE("softmax_rows") {
  SUBCASE("equal values give uniform rows") {
    Tensor x = Tensor::full({2, 5}, 3.25);
    Tensor y = softmax_rows(x);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
  }
  SUBCASE("rows sum to one") {
    Rng rng(7);
    Tensor x = random_tensor({4, 9}, rng, false);
    Tensor y = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) s += y.at(i * 9 + j);
      CHECK(std::fabs(s - 1.0) < 1e-12);
    }
  }
  SUBCASE("shift invariance") {
    Rng rng(8);
    Tensor x = random_tensor({3, 6}, rng, false);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (double& v : shifted) v += 41.5;
    Tensor y0 = softmax_rows(x);
    Tensor y1 = softmax_rows(Tensor::from_data({3, 6}, std::move(shifted)));
    for (std::size_t i = 0; i < y0.size(); ++i)
      CHECK(y0.at(i) == doctest::Approx(y1.at(i)).epsilon(1e-13));
  }
}

TEST_CASE("layernorm") {
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  SUBCASE("constant row maps to zeros through eps") {
    Tensor x = Tensor::full({2, 4}, 5.0);
    Tensor y = layernorm(x, gamma, beta);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("row statistics") {
    Rng rng(11);
    Tensor x = random_tensor({3, 4}, rng, false);
    Tensor y = layernorm(x, gamma, beta, 1e-10);
    for (std::size_t i = 0; i < 3; ++i) {
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < 4; ++j) mean += y.at(i * 4 + j);
      mean /= 4;
      for (std::size_t j = 0; j < 4; ++j) {
        double d = y.at(i * 4 + j) - mean;
        var += d * d;
      }
      var /= 4;
      CHECK(std::fabs(mean) < 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("gradient matches central differences") {
    Rng rng(12);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor g = random_tensor({4}, rng);
    Tensor b = random_tensor({4}, rng);
    std::vector<Tensor> params = {x, g, b};
    auto f = [&]() {
      // A non-symmetric readout so every coordinate matters.
      Tensor y = layernorm(x, g, b);
      Tensor w = Tensor::from_data({4, 1}, {0.3, -1.1, 0.7, 2.0});
      return sum_all(sigmoid(matmul(y, w)));
    };
    auto report = finite_diff_check(f, params, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones gradient") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(sum_all(x));
    }
    for (double v : x.grad()) CHECK(v == 1.0);
  }
  SUBCASE("a tensor used twice doubles its gradient") {
    Tensor x = Tensor::from_data({2, 2}, {1, -2, 0.5, 3}, true);
    Tensor w = Tensor::from_data({2, 2}, {2, 0, 1, 1});
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor once = sum_all(matmul(x, w));
      Tensor twice = add(once, once);
      tape.backward(twice);
    }
    std::vector<double> doubled(x.grad().begin(), x.grad().end());

    Tensor x2 = Tensor::from_data({2, 2}, {1, -2, 0.5, 3}, true);
    Tape tape2;
    {
      TapeScope scope(tape2);
      tape2.backward(sum_all(matmul(x2, w)));
    }
    for (std::size_t i = 0; i < 4; ++i) CHECK(doubled[i] == 2.0 * x2.grad()[i]);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor x = Tensor::zeros({2, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
  SUBCASE("loss must live on the tape") {
    Tensor x = Tensor::scalar(1.0, true);
    Tape tape;
    CHECK_THROWS_AS(tape.backward(x), ContractError);
  }
}

TEST_CASE("gradient accumulation law: k uses sum k single-use grads") {
  Rng rng(21);
  for (int k = 2; k <= 4; ++k) {
    Tensor x = random_tensor({3, 3}, rng);
    Tensor w = random_tensor({3, 2}, rng, false);

    Tape tape;
    {
      TapeScope scope(tape);
      Tensor total = sum_all(matmul(x, w));
      for (int i = 1; i < k; ++i) total = add(total, sum_all(matmul(x, w)));
      tape.backward(total);
    }
    std::vector<double> shared(x.grad().begin(), x.grad().end());

    Tensor x1 = x.clone().set_requires_grad(true);
    Tape tape1;
    {
      TapeScope scope(tape1);
      tape1.backward(sum_all(matmul(x1, w)));
    }
    for (std::size_t i = 0; i < shared.size(); ++i)
      CHECK(shared[i] == doctest::Approx(k * x1.grad()[i]).epsilon(1e-14));
  }
}

TEST_CASE("three-layer composite matches finite differences") {
  Rng rng(31);
  Tensor x = Tensor::from_data({2, 3}, {0.2, -0.4, 1.1, 0.9, -1.3, 0.05});
  Tensor w1 = random_tensor({3, 4}, rng);
  Tensor b1 = random_tensor({4}, rng);
  Tensor w2 = random_tensor({4, 4}, rng);
  Tensor g = random_tensor({4}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor w3 = random_tensor({4, 1}, rng);
  std::vector<Tensor> params = {w1, b1, w2, g, b, w3};
  auto f = [&]() {
    Tensor h1 = relu(add_bias(matmul(x, w1), b1));
    Tensor h2 = layernorm(matmul(h1, w2), g, b);
    return sum_all(sigmoid(matmul(h2, w3)));
  };
  auto report = finite_diff_check(f, params, 1e-5);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("structural ops match finite differences") {
  Rng rng(41);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  Tensor c = random_tensor({2, 6}, rng);
  Tensor d = random_tensor({3, 4}, rng);
  std::vector<Tensor> params = {a, b, c, d};
  auto f = [&]() {
    Tensor wide = concat_cols(a, b);                    // [3x6]
    Tensor tall = concat_rows(std::vector<Tensor>{wide, c});  // [5x6]
    Tensor part = slice_rows(slice_cols(tall, 1, 5), 0, 3);   // [3x4]
    Tensor mixed = mul(part, transpose(transpose(d)));
    Tensor quot = divide(maximum(mixed, affine(d, 0.5, 0.1)),
                         affine(minimum(mixed, d), 0.0, 2.5));
    return add(pick(sum_all(quot), 0), pick(quot, 5));
  };
  auto report = finite_diff_check(f, params, 1e-6);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("gather_rows") {
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  SUBCASE("lookup and repeated-id accumulation") {
    std::vector<std::size_t> ids = {2, 0, 2};
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor rows = gather_rows(table, ids);
      CHECK(rows.at(0) == 5.0);
      CHECK(rows.at(2) == 1.0);
      tape.backward(sum_all(rows));
    }
    CHECK(table.grad()[0] == 1.0);  // row 0 used once
    CHECK(table.grad()[2] == 0.0);  // row 1 unused
    CHECK(table.grad()[4] == 2.0);  // row 2 used twice
  }
  SUBCASE("id out of range") {
    std::vector<std::size_t> ids = {3};
    CHECK_THROWS_AS(gather_rows(table, ids), DataError);
  }
}

TEST_CASE("finite_diff_check on a quadratic is exact to rounding") {
  Rng rng(51);
  Tensor p = random_tensor({5}, rng);
  auto f = [&]() { return sum_all(mul(p, p)); };
  std::vector<Tensor> params = {p};
  auto report = finite_diff_check(f, params, 1e-5);
  CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("tape invariants") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor w = Tensor::from_data({2, 2}, {1, 0, 0, 1}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor h = matmul(x, w);
    Tensor y = relu(h);
    tape.backward(sum_all(y));
  }
  SUBCASE("records are topologically ordered") {
    for (std::size_t i = 0; i < tape.num_records(); ++i) {
      const auto& rec = tape.record(i);
      for (std::size_t in : rec.inputs) CHECK(in < rec.output);
    }
  }
  SUBCASE("node ids are unique per tape") {
    std::vector<std::size_t> outs;
    for (std::size_t i = 0; i < tape.num_records(); ++i) outs.push_back(tape.record(i).output);
    std::sort(outs.begin(), outs.end());
    CHECK(std::adjacent_find(outs.begin(), outs.end()) == outs.end());
  }
}

TEST_CASE("backward visits each record exactly once") {
  Tensor x = Tensor::scalar(2.0, true);
  int calls = 0;
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = affine(x, 3.0, 0.0);
    Tensor z = Tensor::scalar(y.value());
    std::vector<Tensor> ins = {y};
    autodiff::record_op("probe", ins, z, [&calls, y, z]() mutable {
      ++calls;
      Tensor yy = y;
      yy.grad_accumulator()[0] += z.grad_view()[0];
    });
    tape.backward(z);
  }
  CHECK(calls == 1);
  CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("determinism: identical seeds give bitwise-identical data and grads") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor w = random_tensor({4, 4}, rng);
    Tape tape;
    std::vector<double> out;
    {
      TapeScope scope(tape);
      Tensor y = softmax_rows(matmul(relu(x), w));
      tape.backward(sum_all(mul(y, y)));
    }
    out.insert(out.end(), x.data().begin(), x.data().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run(99) == run(99));
  CHECK(run(99) != run(100));
}

TEST_CASE("ops run tape-free outside a scope") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor y = matmul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(x.has_grad());
}
