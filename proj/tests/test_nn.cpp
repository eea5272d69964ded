#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "psym/errors.hpp"
#include "psym/nn/checkpoint.hpp"
#include "psym/nn/encoder.hpp"
#include "psym/nn/ops.hpp"
#include "psym/nn/optim.hpp"

using namespace psym;
using nn::Shape;
using nn::Tensor;
using nn::Tensor64;

TEST_CASE("tensor data length matches its shape") {
  Tensor t(Shape{2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>(3)), ConfigError);
  auto r = t.reshaped({6, 4});
  r.data()[0] = 5.0f;
  CHECK(t.data()[0] == 5.0f);
}

TEST_CASE("backward of a linear and a quadratic function") {
  auto w = Tensor64::parameter({4}, {1.0, -2.0, 0.5, 3.0});
  nn::sum(w).backward();
  for (double g : w.grad()) CHECK(g == 1.0);

  w.zero_grad();
  nn::scale(nn::sum(nn::mul(w, w)), 0.5).backward();
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(w.data()[i]));
}

TEST_CASE("gradients accumulate across backward calls") {
  auto w = Tensor64::parameter({3}, {1.0, 2.0, 3.0});
  nn::sum(w).backward();
  nn::sum(w).backward();
  for (double g : w.grad()) CHECK(g == 2.0);
}

TEST_CASE("backward without a recorded forward is a state error") {
  auto w = Tensor64::parameter({2}, {1.0, 2.0});
  auto leaf_scalar = Tensor64::scalar(2.0);
  CHECK_THROWS_AS(leaf_scalar.backward(), StateError);
  CHECK_THROWS_AS(nn::add(w, w).backward(), StateError);  // not a scalar
}

TEST_CASE("every layer passes a finite-difference check over 20 seeds") {
  for (const auto& name : gradcheck::layer_names()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) worst = std::max(worst, gradcheck::layer_error(name, seed));
    CAPTURE(name);
    CHECK(worst < gradcheck::kTolerance);
  }
}

TEST_CASE("batch norm in training mode normalizes and updates running statistics") {
  std::mt19937_64 rng(4);
  auto x = Tensor64(Shape{4, 2, 3, 3}, oracle::uniform_values(72, rng, 2.0, 5.0));
  auto gamma = Tensor64::parameter({2}, {1.0, 1.0});
  auto beta = Tensor64::parameter({2}, {0.0, 0.0});
  Tensor64 rm(Shape{2}), rv(Shape{2}, std::vector<double>{1.0, 1.0});
  auto y = nn::batch_norm2d(x, gamma, beta, rm, rv, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0, ss = 0.0, xs = 0.0, xss = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 9; ++k) {
        const double v = y.data()[(i * 2 + c) * 9 + k], xv = x.data()[(i * 2 + c) * 9 + k];
        s += v;
        ss += v * v;
        xs += xv;
        xss += xv * xv;
      }
    CHECK(s / 36 == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(ss / 36 == doctest::Approx(1.0).epsilon(1e-4));
    const double mean = xs / 36, unbiased = (xss - 36 * mean * mean) / 35;
    CHECK(rm.data()[c] == doctest::Approx(0.1 * mean));
    CHECK(rv.data()[c] == doctest::Approx(0.9 + 0.1 * unbiased));
  }
  auto before = rm.clone();
  nn::batch_norm2d(x, gamma, beta, rm, rv, false);
  CHECK(rm.data()[0] == before.data()[0]);
}

TEST_CASE("zero-initialized final layer maps an all-zero patch to a zero embedding") {
  nn::EncoderConfig cfg;
  cfg.seed = 2;
  nn::Encoder<float> enc(cfg);
  for (auto& p : enc.named_parameters(""))
    if (p.name == "embed.weight") std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0f);
  auto e = enc.forward(Tensor(Shape{1, 32, 32}));
  for (float v : e.data()) CHECK(v == 0.0f);
}

TEST_CASE("identical patches give identical embeddings") {
  nn::Encoder<float> enc(nn::EncoderConfig{});
  std::mt19937_64 rng(1);
  auto v = oracle::uniform_values(1024, rng, 0.0, 1.0);
  Tensor a(Shape{1, 32, 32}, std::vector<float>(v.begin(), v.end()));
  auto e1 = enc.forward(a), e2 = enc.forward(a.clone());
  CHECK(std::equal(e1.data().begin(), e1.data().end(), e2.data().begin()));
  CHECK(nn::euclidean_distance(e1, e2).item() == 0.0f);
}

TEST_CASE("encoder forward matches a scalar re-implementation") {
  for (bool bn : {true, false})
    for (std::string pooling : {"max", "avg"}) {
      nn::EncoderConfig cfg;
      cfg.seed = 7;
      cfg.batch_norm = bn;
      cfg.pooling = pooling;
      nn::Encoder<double> enc(cfg);
      std::mt19937_64 rng(7);
      // Non-trivial running statistics and affine parameters.
      for (auto& p : enc.named_parameters("")) {
        if (p.name.find(".bn.") == std::string::npos && p.name.find(".bias") == std::string::npos) continue;
        const bool var = p.name.ends_with("running_var") || p.name.ends_with("gamma");
        auto vals = oracle::uniform_values(p.tensor.size(), rng, var ? 0.5 : -0.2, var ? 1.5 : 0.2);
        std::copy(vals.begin(), vals.end(), p.tensor.data().begin());
      }
      auto patch = oracle::uniform_values(1024, rng, 0.0, 1.0);
      auto e = enc.forward(Tensor64(Shape{1, 32, 32}, patch));
      auto expected = oracle::encoder_forward(enc, patch);
      CAPTURE(bn);
      CAPTURE(pooling);
      REQUIRE(e.size() == expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) CHECK(e.data()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
}

TEST_CASE("encoder rejects wrong shapes and bad configs") {
  nn::Encoder<float> enc(nn::EncoderConfig{});
  CHECK_THROWS_AS(enc.forward(Tensor(Shape{1, 16, 16})), ConfigError);
  CHECK_THROWS_AS(enc.forward(Tensor(Shape{1, 2, 32, 32})), ConfigError);
  nn::EncoderConfig bad;
  bad.embedding_dim = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.input_side = 30;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.pooling = "median";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("non-finite activations raise a numeric error naming the layer") {
  nn::Encoder<float> enc(nn::EncoderConfig{});
  Tensor x(Shape{1, 32, 32});
  x.data()[5] = std::numeric_limits<float>::infinity();
  try {
    enc.forward(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("stage0") != std::string::npos);
  }
}

TEST_CASE("every learnable tensor belongs to exactly one parameter group") {
  for (bool bn : {true, false}) {
    nn::EncoderConfig cfg;
    cfg.batch_norm = bn;
    nn::Encoder<float> enc(cfg);
    std::size_t learnable = 0;
    for (const auto& p : enc.named_parameters(""))
      if (p.tensor.requires_grad()) ++learnable;
    std::size_t grouped = 0;
    for (const auto& g : enc.param_groups("")) {
      grouped += g.tensors.size();
      for (const auto& t : g.tensors) CHECK(t.requires_grad());
    }
    CHECK(grouped == learnable);
  }
}

// ---------------------------------------------------------------------------
// Optimizers

namespace {

std::vector<nn::ParamGroup<double>> one_group(Tensor64 w, bool excluded) { return {{"w", {w}, excluded}}; }

}  // namespace

TEST_CASE("LARS with equal weight and gradient norms is a plain SGD step") {
  auto w = Tensor64::parameter({2}, {3.0, 4.0});
  w.grad_buffer() = {0.0, 5.0};
  auto opt = nn::OptState::lars(0.1, 0.0, 0.0);
  auto groups = one_group(w, false);
  nn::lars_step<double>(opt, groups);
  CHECK(w.data()[0] == doctest::Approx(3.0));
  CHECK(w.data()[1] == doctest::Approx(4.0 - 0.5));
  CHECK(opt.step_count == 1);
}

TEST_CASE("LARS trust ratio") {
  CHECK(nn::lars_trust_ratio(0.0, 3.0, 0.1) == 1.0);
  CHECK(nn::lars_trust_ratio(2.0, 2.0, 0.0) == doctest::Approx(1.0));
  CHECK(nn::lars_trust_ratio(2.0, 1.0, 0.5) == doctest::Approx(2.0 / (1.0 + 1.0 + 1e-9)));
}

TEST_CASE("excluded groups update like momentum SGD regardless of norms") {
  auto a = Tensor64::parameter({3}, {100.0, -50.0, 7.0});
  auto b = Tensor64::parameter({3}, {100.0, -50.0, 7.0});
  auto opt_lars = nn::OptState::lars(0.01, 0.1, 0.9);
  auto opt_sgd = nn::OptState::lars(0.01, 0.0, 0.9);
  std::vector<double> v(3, 0.0), ref{100.0, -50.0, 7.0};
  for (int step = 0; step < 3; ++step) {
    std::vector<double> g{0.001 * (step + 1), -2.0, 0.5};
    a.grad_buffer() = g;
    b.grad_buffer() = g;
    auto ga = one_group(a, true);
    auto gb = one_group(b, true);
    nn::lars_step<double>(opt_lars, ga);
    nn::lars_step<double>(opt_sgd, gb);
    for (int i = 0; i < 3; ++i) {
      v[i] = 0.9 * v[i] + 0.01 * g[i];
      ref[i] -= v[i];
    }
  }
  for (int i = 0; i < 3; ++i) {
    CHECK(a.data()[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    CHECK(b.data()[i] == a.data()[i]);
  }
}

TEST_CASE("LARS trajectory on a two-parameter problem matches a hand-stepped oracle") {
  // loss = (w0 - 1)^2 + 3 (w1 + 2)^2 with one adapted and one excluded tensor.
  auto w0 = Tensor64::parameter({1}, {0.5});
  auto w1 = Tensor64::parameter({1}, {0.25});
  std::vector<nn::ParamGroup<double>> groups{{"adapted", {w0}, false}, {"excluded", {w1}, true}};
  auto opt = nn::OptState::lars(0.05, 0.01, 0.9);
  double x0 = 0.5, x1 = 0.25, v0 = 0.0, v1 = 0.0;
  for (int step = 0; step < 3; ++step) {
    auto l = nn::add(nn::mul(nn::add_scalar(w0, -1.0), nn::add_scalar(w0, -1.0)),
                     nn::scale(nn::mul(nn::add_scalar(w1, 2.0), nn::add_scalar(w1, 2.0)), 3.0));
    nn::sum(l).backward();
    nn::lars_step<double>(opt, groups);
    const double g0 = 2.0 * (x0 - 1.0), g1 = 6.0 * (x1 + 2.0);
    const double ratio = std::abs(x0) / (std::abs(g0) + 0.01 * std::abs(x0) + 1e-9);
    v0 = 0.9 * v0 + 0.05 * ratio * (g0 + 0.01 * x0);
    x0 -= v0;
    v1 = 0.9 * v1 + 0.05 * g1;
    x1 -= v1;
    CHECK(w0.data()[0] == doctest::Approx(x0).epsilon(1e-14));
    CHECK(w1.data()[0] == doctest::Approx(x1).epsilon(1e-14));
  }
}

TEST_CASE("LARS reduces to SGD when every group is excluded") {
  std::mt19937_64 rng(3);
  auto w = Tensor64::parameter({5}, oracle::uniform_values(5, rng));
  auto ref = w.clone();
  auto opt = nn::OptState::lars(0.1, 0.0, 0.0);
  auto g = oracle::uniform_values(5, rng);
  w.grad_buffer() = g;
  auto groups = one_group(w, true);
  nn::lars_step<double>(opt, groups);
  for (int i = 0; i < 5; ++i) CHECK(w.data()[i] == doctest::Approx(ref.data()[i] - 0.1 * g[i]).epsilon(1e-15));
  for (double v : w.grad()) CHECK(v == 0.0);
}

TEST_CASE("Adam leaves parameters unchanged for zero gradients") {
  auto w = Tensor64::parameter({3}, {1.0, -2.0, 0.5});
  auto opt = nn::OptState::adam(0.01);
  w.grad_buffer() = {0.0, 0.0, 0.0};
  auto groups = one_group(w, false);
  nn::adam_step<double>(opt, groups);
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == -2.0);
  CHECK(w.data()[2] == 0.5);
}

TEST_CASE("Adam first step moves by about the learning rate") {
  auto w = Tensor64::parameter({1}, {1.0});
  auto opt = nn::OptState::adam(0.01);
  w.grad_buffer() = {1.0};
  auto groups = one_group(w, false);
  nn::adam_step<double>(opt, groups);
  CHECK(w.data()[0] == doctest::Approx(0.99).epsilon(1e-6));
}

TEST_CASE("Adam trajectory on a scalar quadratic matches a hand-computed oracle") {
  // loss = 2 (w - 3)^2, weight decay 1e-5 added to the gradient.
  auto w = Tensor64::parameter({1}, {0.0});
  auto opt = nn::OptState::adam(0.1, 1e-5);
  auto groups = one_group(w, false);
  double x = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    auto d = nn::add_scalar(w, -3.0);
    nn::scale(nn::sum(nn::mul(d, d)), 2.0).backward();
    nn::adam_step<double>(opt, groups);
    const double g = 4.0 * (x - 3.0) + 1e-5 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(std::abs(w.data()[0] - x) < 1e-10);
  }
}

TEST_CASE("gradient accumulation matches the full-batch gradient") {
  nn::EncoderConfig cfg;
  cfg.input_side = 16;
  cfg.embedding_dim = 4;
  cfg.seed = 9;
  cfg.batch_norm = false;
  nn::Encoder<double> enc(cfg);
  std::mt19937_64 rng(9);
  const std::size_t n = 8, per = 256;
  auto pixels = oracle::uniform_values(n * per, rng, 0.0, 1.0);
  auto groups = enc.param_groups("");
  auto loss_of = [&](std::span<const std::size_t> idx) {
    std::vector<double> v;
    for (auto i : idx) v.insert(v.end(), pixels.begin() + i * per, pixels.begin() + (i + 1) * per);
    auto e = enc.forward(Tensor64(Shape{idx.size(), 16, 16}, v));
    return nn::mean(nn::mul(e, e));
  };
  auto grads = [&]() {
    std::vector<std::vector<double>> out;
    for (const auto& g : groups)
      for (const auto& t : g.tensors) out.emplace_back(t.grad().begin(), t.grad().end());
    return out;
  };
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  nn::zero_grads<double>(groups);
  loss_of(all).backward();
  const auto full = grads();
  for (std::size_t k : {1, 2, 4, 8}) {
    nn::zero_grads<double>(groups);
    std::vector<std::span<const std::size_t>> mbs;
    for (std::size_t s = 0; s < n; s += n / k) mbs.push_back(std::span<const std::size_t>(all).subspan(s, n / k));
    nn::accumulate_gradients(std::span<const std::span<const std::size_t>>(mbs), n, loss_of);
    const auto acc = grads();
    double worst = 0.0;
    for (std::size_t t = 0; t < full.size(); ++t)
      for (std::size_t i = 0; i < full[t].size(); ++i)
        worst = std::max(worst, std::abs(acc[t][i] - full[t][i]) / std::max(std::abs(full[t][i]), 1e-12));
    CAPTURE(k);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("gradient accumulation rejects inconsistent microbatches") {
  std::vector<std::vector<int>> mbs{{1, 2}, {3, 4, 5}};
  auto fn = [](const std::vector<int>&) { return Tensor64::scalar(0.0); };
  CHECK_THROWS_AS(nn::accumulate_gradients(std::span<const std::vector<int>>(mbs), 5, fn), ConfigError);
  std::vector<std::vector<int>> ok{{1, 2}, {3, 4}};
  CHECK_THROWS_AS(nn::accumulate_gradients(std::span<const std::vector<int>>(ok), 5, fn), ConfigError);
}

TEST_CASE("training steps are bit-identical for identical seeds") {
  auto run = [] {
    nn::EncoderConfig cfg;
    cfg.input_side = 16;
    cfg.seed = 5;
    nn::Encoder<float> enc(cfg);
    auto groups = enc.param_groups("");
    auto opt = nn::OptState::lars(0.01, 1e-4);
    std::mt19937_64 rng(5);
    for (int step = 0; step < 4; ++step) {
      auto v = oracle::uniform_values(4 * 256, rng, 0.0, 1.0);
      auto e = enc.forward(Tensor(Shape{4, 16, 16}, std::vector<float>(v.begin(), v.end())), true);
      nn::mean(nn::mul(e, e)).backward();
      nn::lars_step<float>(opt, groups);
    }
    std::vector<float> out;
    for (const auto& p : enc.named_parameters("")) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("optimizer state survives a JSON round trip exactly") {
  auto w = Tensor64::parameter({2}, {0.1, 0.2});
  w.grad_buffer() = {0.3, -0.7};
  auto opt = nn::OptState::adam(0.01, 1e-5);
  auto groups = one_group(w, false);
  nn::adam_step<double>(opt, groups);
  nlohmann::json j = opt;
  auto back = j.get<nn::OptState>();
  CHECK(back.step_count == opt.step_count);
  CHECK(back.first_moment == opt.first_moment);
  CHECK(back.second_moment == opt.second_moment);
  CHECK(back.kind == nn::OptimizerKind::Adam);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST_CASE("checkpoint file layout") {
  const auto dir = std::filesystem::temp_directory_path() / "psym_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.psym";
  nn::Checkpoint ck;
  ck.metadata = {{"epoch", 3}};
  ck.blobs.push_back({"w", {2}, {1.5f, -2.0f}});
  nn::save_checkpoint(path, ck);

  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() > 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PSYM");
  CHECK(bytes[4] == nn::kCheckpointVersion);
  CHECK(bytes[5] == 0);
  float tail[2];
  std::memcpy(tail, bytes.data() + bytes.size() - 8, 8);
  CHECK(tail[0] == 1.5f);
  CHECK(tail[1] == -2.0f);

  auto back = nn::load_checkpoint(path);
  CHECK(back.metadata.at("epoch") == 3);
  CHECK(back.blob("w").values == ck.blobs[0].values);
  CHECK_THROWS_AS(back.blob("missing"), DataError);

  std::ofstream(dir / "bad.psym") << "NOPE";
  CHECK_THROWS_AS(nn::load_checkpoint(dir / "bad.psym"), DataError);
  std::filesystem::remove_all(dir);
}
