#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "psym/errors.hpp"
#include "psym/eval.hpp"

using namespace psym;

TEST_CASE("auc matches the pairwise definition") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = fixtures::random_scored_set(rng, trial % 2 == 0);
    CHECK(std::abs(eval::auc(s) - fixtures::brute_force_auc(s.scores, s.labels)) <= 1e-12);
  }
}

TEST_CASE("auc is invariant to strictly increasing transforms") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = fixtures::random_scored_set(rng, trial % 3 == 0);
    const double a = eval::auc(s);
    for (auto& v : s.scores) v = std::exp(3.0 * v) - 7.0;
    CHECK(eval::auc(s) == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("auc edge cases") {
  std::vector<double> s{0.1, 0.2, 0.3};
  std::vector<int> one_class{1, 1, 1};
  CHECK_THROWS_AS(eval::auc(s, one_class), UndefinedMetricError);
  std::vector<int> bad{0, 2, 1};
  CHECK_THROWS_AS(eval::auc(s, bad), ArgumentError);
  std::vector<int> y{0, 1};
  CHECK_THROWS_AS(eval::auc(s, y), ArgumentError);
  std::vector<double> tied{0.5, 0.5, 0.5};
  std::vector<int> mixed{0, 1, 0};
  CHECK(eval::auc(tied, mixed) == 0.5);
  std::vector<int> perfect{0, 0, 1};
  CHECK(eval::auc(s, perfect) == 1.0);
}

TEST_CASE("average auc over area cutoffs") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> areas(200), scores(200);
  for (std::size_t i = 0; i < areas.size(); ++i) areas[i] = i % 3 == 0 ? 0.0 : u(rng);

  SUBCASE("scores equal to the area rank every cutoff perfectly") {
    const auto r = eval::average_auc_over_cutoffs(areas, areas);
    CHECK(r.mean_auc == 1.0);
    CHECK(r.cutoffs.size() == eval::kDefaultCutoffs);
    CHECK(r.cutoffs.front() == doctest::Approx(1.0 / 101.0));
    CHECK(r.evaluated + r.skipped == r.cutoffs.size());
  }
  SUBCASE("binary areas reduce to plain auc") {
    std::vector<double> binary(areas.size());
    std::vector<int> labels(areas.size());
    for (std::size_t i = 0; i < areas.size(); ++i) {
      labels[i] = areas[i] > 0.5 ? 1 : 0;
      binary[i] = labels[i];
      scores[i] = u(rng) + 0.2 * labels[i];
    }
    const auto r = eval::average_auc_over_cutoffs(scores, binary);
    CHECK(r.skipped == 0);
    CHECK(std::abs(r.mean_auc - eval::auc(scores, labels)) <= 1e-12);
  }
  SUBCASE("no abnormal items leaves the metric undefined") {
    std::vector<double> zeros(10, 0.0), s(10, 0.3);
    CHECK_THROWS_AS(eval::average_auc_over_cutoffs(s, zeros), UndefinedMetricError);
  }
  SUBCASE("mean over the evaluated cutoffs") {
    for (auto& v : scores) v = u(rng);
    const auto r = eval::average_auc_over_cutoffs(scores, areas, 7);
    double total = 0.0;
    for (std::size_t i = 0; i < r.cutoffs.size(); ++i) {
      std::vector<int> labels(areas.size());
      for (std::size_t k = 0; k < areas.size(); ++k) labels[k] = areas[k] >= r.cutoffs[i] ? 1 : 0;
      total += fixtures::brute_force_auc(scores, labels);
    }
    CHECK(r.mean_auc == doctest::Approx(total / 7.0).epsilon(1e-12));
  }
}

TEST_CASE("one-vs-rest auc averages the per-class values") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 90, k = 3;
  std::vector<double> probs(n * k);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += (probs[i * k + c] = u(rng) + (labels[i] == static_cast<int>(c)));
    for (std::size_t c = 0; c < k; ++c) probs[i * k + c] /= total;
  }
  const auto r = eval::ovr_auc(probs, k, labels);
  REQUIRE(r.per_class.size() == k);
  double mean = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = probs[i * k + c];
      y[i] = labels[i] == static_cast<int>(c);
    }
    CHECK(r.per_class[c] == doctest::Approx(fixtures::brute_force_auc(s, y)).epsilon(1e-12));
    mean += r.per_class[c] / k;
  }
  CHECK(r.average == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("linearly separable embeddings are probed to near-perfect auc") {
  std::mt19937_64 rng(9);
  const auto train = fixtures::separable_embeddings(rng, 200), test = fixtures::separable_embeddings(rng, 100);
  eval::ProbeConfig cfg;
  cfg.epochs = 30;
  const auto head = eval::train_linear_probe(train, 2, cfg);
  const auto p = eval::probe_probabilities(head, test);
  std::vector<double> s(test.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = p[i * 2 + 1];
  CHECK(eval::auc(s, test.labels) >= 0.99);
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(p[i * 2] + p[i * 2 + 1] == doctest::Approx(1.0));
}

TEST_CASE("probe refuses a training split missing a class") {
  eval::EmbeddingSet s{{0.0f, 1.0f, 2.0f}, 1, {0, 0, 0}};
  CHECK_THROWS_AS(eval::train_linear_probe(s, 2, {}), ConfigError);
  eval::ProbeConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("probing leaves the encoder untouched and ensembles of identical heads equal one head") {
  nn::Encoder<float> enc(fixtures::small_encoder(5));
  const auto patches = fixtures::blob_patches(31, 40);
  const auto before = eval::parameter_checksum(enc);
  eval::ProbeConfig cfg;
  cfg.epochs = 40;
  const nn::Encoder<float>* one[] = {&enc};
  const nn::Encoder<float>* two[] = {&enc, &enc};
  const auto single = eval::probe_train_eval(one, patches, 2, cfg);
  const auto pair = eval::probe_train_eval(two, patches, 2, cfg);
  CHECK(eval::parameter_checksum(enc) == before);
  CHECK(single.n_train == 40);
  CHECK(single.n_test == 40);
  CHECK(single.test_auc >= 0.99);
  CHECK(pair.test_auc == single.test_auc);
  REQUIRE(pair.single_head_auc.size() == 2);
  CHECK(pair.single_head_auc[0] == pair.single_head_auc[1]);
}

TEST_CASE("checksum sees every parameter") {
  nn::Encoder<float> enc(fixtures::small_encoder(5));
  const auto before = eval::parameter_checksum(enc);
  CHECK(eval::parameter_checksum(nn::Encoder<float>(fixtures::small_encoder(5))) == before);
  auto params = enc.named_parameters("");
  auto last = params.back().tensor.data();
  last[last.size() - 1] += 1.0f;
  CHECK(eval::parameter_checksum(enc) != before);
}

TEST_CASE("area bands") {
  CHECK(eval::area_band(0.0) == "normal");
  CHECK(eval::area_band(0.01) == "modest");
  CHECK(eval::area_band(0.5) == "modest");
  CHECK(eval::area_band(0.51) == "high");
}

TEST_CASE("embedding export has one row per pair and 3 + 2d columns") {
  nn::Encoder<float> enc(fixtures::small_encoder(3));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<synth::PatchPair> pairs(10);
  for (int i = 0; i < 10; ++i) {
    auto& p = pairs[static_cast<std::size_t>(i)];
    p.pair_id = i;
    p.size = 16;
    p.area = i / 10.0;
    std::vector<float> a(256), b(256);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    p.p1 = nn::Tensor({16, 16}, a);
    p.p2 = nn::Tensor({16, 16}, b);
  }
  const auto dir = std::filesystem::temp_directory_path() / "psym_test_export";
  std::filesystem::create_directories(dir);
  const nlohmann::json echo{{"seed", 3}};
  eval::export_embeddings(enc, pairs, dir / "a.csv", echo);
  eval::export_embeddings(enc, pairs, dir / "b.csv", echo);

  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  std::ifstream in(dir / "a.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "# config " + echo.dump());
  std::getline(in, line);
  CHECK(line.rfind("pair_id,A,band,E0", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 10);
  }
  CHECK(rows == 10);
  std::filesystem::remove_all(dir);
}

TEST_CASE("eval report carries the config in both formats") {
  eval::EvalReport r;
  r.task = "pair-auc";
  r.config = {{"seed", 17}};
  r.metrics = {{"auc", 0.75}};
  r.sweep = eval::average_auc_over_cutoffs(std::vector<double>{0.1, 0.9}, std::vector<double>{0.0, 1.0}, 3);
  r.has_sweep = true;
  const auto j = r.to_json();
  CHECK(j.at("config") == r.config);
  CHECK(j.at("format_version") == eval::kReportFormatVersion);
  CHECK(j.at("cutoff_sweep").at("evaluated") == 3);
  const auto csv = r.to_csv();
  CHECK(csv.rfind("metric,value\nauc,0.75\n", 0) == 0);
  CHECK(csv.find("auc_at_0.25,1") != std::string::npos);
}
