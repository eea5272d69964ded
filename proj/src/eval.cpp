#include "psym/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "psym/errors.hpp"
#include "psym/nn/ops.hpp"
#include "psym/nn/optim.hpp"

namespace psym::eval {

void ScoredSet::validate() const {
  if (scores.size() != labels.size()) throw ArgumentError("scores and labels differ in length");
  if (!areas.empty() && areas.size() != scores.size()) throw ArgumentError("areas and scores differ in length");
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("auc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ArgumentError("auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUC is undefined with a single class");
  for (double s : scores)
    if (std::isnan(s)) throw ArgumentError("auc: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based average ranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn_ = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn_);
}

CutoffSweep average_auc_over_cutoffs(std::span<const double> scores, std::span<const double> areas,
                                     std::size_t n_cutoffs) {
  if (scores.size() != areas.size()) throw ArgumentError("scores and areas differ in length");
  if (n_cutoffs == 0) throw ArgumentError("need at least one cutoff");
  CutoffSweep out;
  std::vector<int> labels(scores.size());
  double total = 0.0;
  for (std::size_t i = 1; i <= n_cutoffs; ++i) {
    const double c = static_cast<double>(i) / static_cast<double>(n_cutoffs + 1);
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < areas.size(); ++k) {
      labels[k] = areas[k] >= c ? 1 : 0;
      n_pos += static_cast<std::size_t>(labels[k]);
    }
    out.cutoffs.push_back(c);
    if (n_pos == 0 || n_pos == labels.size()) {
      out.aucs.push_back(std::numeric_limits<double>::quiet_NaN());
      ++out.skipped;
      continue;
    }
    const double a = auc(scores, labels);
    out.aucs.push_back(a);
    total += a;
    ++out.evaluated;
  }
  if (out.evaluated == 0) throw UndefinedMetricError("every cutoff yields a single class; average AUC is undefined");
  out.mean_auc = total / static_cast<double>(out.evaluated);
  return out;
}

OvrResult ovr_auc(std::span<const double> probabilities, std::size_t n_classes, std::span<const int> labels) {
  if (n_classes < 2) throw ArgumentError("OvR AUC needs at least two classes");
  if (probabilities.size() != labels.size() * n_classes)
    throw ArgumentError("probabilities must be [N, K] with N = number of labels");
  OvrResult out;
  std::vector<double> scores(labels.size());
  std::vector<int> binary(labels.size());
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities[i * n_classes + k];
      binary[i] = labels[i] == static_cast<int>(k) ? 1 : 0;
    }
    out.per_class.push_back(auc(scores, binary));
  }
  out.average = std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) / static_cast<double>(n_classes);
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe

void ProbeConfig::validate() const {
  if (epochs == 0) throw ConfigError("probe epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("probe batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("probe learning rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("probe weight decay must be >= 0");
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
}

namespace {

constexpr std::size_t kInferenceChunk = 256;

nn::Tensor stack_patches(std::span<const nn::Tensor> patches) {
  const nn::Shape inner = patches.front().shape();
  const std::size_t per = nn::numel(inner);
  std::vector<float> values(per * patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].shape() != inner) throw ConfigError("patches differ in shape");
    auto d = patches[i].data();
    std::copy(d.begin(), d.end(), values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  nn::Shape shape{patches.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return nn::Tensor(shape, std::move(values));
}

std::vector<float> embed_all(const nn::Encoder<float>& encoder, std::span<const nn::Tensor> patches) {
  nn::NoGradGuard guard;
  std::vector<float> out;
  out.reserve(patches.size() * encoder.config().embedding_dim);
  for (std::size_t i = 0; i < patches.size(); i += kInferenceChunk) {
    const std::size_t end = std::min(patches.size(), i + kInferenceChunk);
    auto e = encoder.forward(stack_patches(patches.subspan(i, end - i)));
    out.insert(out.end(), e.data().begin(), e.data().end());
  }
  return out;
}

}  // namespace

EmbeddingSet embed_patches(const nn::Encoder<float>& encoder, std::span<const synth::LabeledPatch> patches,
                           bool multiclass) {
  EmbeddingSet set;
  set.dim = encoder.config().embedding_dim;
  std::vector<nn::Tensor> px;
  for (const auto& p : patches) {
    px.push_back(p.pixels);
    set.labels.push_back(multiclass ? p.class_label : p.binary_label);
  }
  if (!px.empty()) set.values = embed_all(encoder, px);
  return set;
}

ProbeHead train_linear_probe(const EmbeddingSet& train, std::size_t n_classes, const ProbeConfig& cfg) {
  cfg.validate();
  if (n_classes < 2) throw ConfigError("probe needs at least two classes");
  if (train.values.size() != train.size() * train.dim) throw ConfigError("embedding set is inconsistent");
  std::vector<std::size_t> counts(n_classes, 0);
  for (int l : train.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes) throw ConfigError("probe label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t k = 0; k < n_classes; ++k)
    if (counts[k] == 0) throw ConfigError("class " + std::to_string(k) + " is absent from the probe training split");

  ProbeHead head{nn::Tensor::parameter({n_classes, train.dim}, std::vector<float>(n_classes * train.dim, 0.0f)),
                 nn::Tensor::parameter({n_classes}, std::vector<float>(n_classes, 0.0f))};
  const std::vector<nn::ParamGroup<float>> groups{{"probe.weight", {head.weight}, false},
                                                  {"probe.bias", {head.bias}, true}};
  auto opt = nn::OptState::adam(cfg.learning_rate, cfg.weight_decay);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> xb;
  std::vector<int> yb;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(cfg.seed * 1000003u + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), i + cfg.batch_size);
      xb.clear();
      yb.clear();
      for (std::size_t k = i; k < end; ++k) {
        const auto row = train.values.begin() + static_cast<std::ptrdiff_t>(order[k] * train.dim);
        xb.insert(xb.end(), row, row + static_cast<std::ptrdiff_t>(train.dim));
        yb.push_back(train.labels[order[k]]);
      }
      const nn::Tensor x({end - i, train.dim}, xb);
      auto loss = nn::mean(nn::softmax_cross_entropy(nn::linear(x, head.weight, head.bias), std::span<const int>(yb)));
      nn::check_finite(loss, "probe loss");
      loss.backward();
      nn::adam_step<float>(opt, groups);
    }
  }
  head.weight.set_requires_grad(false);
  head.bias.set_requires_grad(false);
  return head;
}

std::vector<double> probe_probabilities(const ProbeHead& head, const EmbeddingSet& set) {
  if (set.dim != head.input_dim()) throw ConfigError("probe head and embeddings differ in dimension");
  const std::size_t k = head.classes(), d = set.dim;
  auto w = head.weight.data();
  auto b = head.bias.data();
  std::vector<double> out(set.size() * k);
  std::vector<double> logits(k);
  for (std::size_t i = 0; i < set.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double z = b[c];
      for (std::size_t j = 0; j < d; ++j) z += static_cast<double>(w[c * d + j]) * set.values[i * d + j];
      logits[c] = z;
      mx = std::max(mx, z);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += (logits[c] = std::exp(logits[c] - mx));
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] = logits[c] / total;
  }
  return out;
}

std::vector<double> ensemble_probabilities(std::span<const ProbeHead> heads, std::span<const EmbeddingSet> sets) {
  if (heads.empty() || heads.size() != sets.size()) throw ArgumentError("need one embedding set per probe head");
  std::vector<double> acc = probe_probabilities(heads[0], sets[0]);
  for (std::size_t h = 1; h < heads.size(); ++h) {
    const auto p = probe_probabilities(heads[h], sets[h]);
    if (p.size() != acc.size()) throw ArgumentError("probe heads disagree on output size");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  if (heads.size() > 1)
    for (auto& v : acc) v /= static_cast<double>(heads.size());
  return acc;
}

namespace {

double score_probabilities(const std::vector<double>& probs, std::size_t n_classes, const std::vector<int>& labels,
                           std::vector<double>* per_class) {
  if (n_classes == 2) {
    std::vector<double> s(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) s[i] = probs[i * 2 + 1];
    return auc(s, labels);
  }
  auto r = ovr_auc(probs, n_classes, labels);
  if (per_class) *per_class = r.per_class;
  return r.average;
}

}  // namespace

ProbeResult probe_train_eval(std::span<const nn::Encoder<float>* const> encoders,
                             std::span<const synth::LabeledPatch> patches, std::size_t n_classes,
                             const ProbeConfig& cfg) {
  if (encoders.empty()) throw ArgumentError("probe needs at least one encoder");
  if (n_classes != 2 && n_classes != 3) throw ConfigError("probe supports 2 (binary) or 3 (multiclass) classes");
  std::vector<synth::LabeledPatch> train, test;
  for (const auto& p : patches) {
    if (p.split == synth::Split::Train) train.push_back(p);
    if (p.split == synth::Split::Test) test.push_back(p);
  }
  if (train.empty()) throw ConfigError("no labeled patches in the training split");
  if (test.empty()) throw DataError("no labeled patches in the test split");
  const bool multiclass = n_classes == 3;

  ProbeResult result;
  result.n_classes = n_classes;
  result.n_train = train.size();
  result.n_test = test.size();
  std::vector<ProbeHead> heads;
  std::vector<EmbeddingSet> test_sets;
  for (const auto* enc : encoders) {
    const auto tr = embed_patches(*enc, train, multiclass);
    heads.push_back(train_linear_probe(tr, n_classes, cfg));
    test_sets.push_back(embed_patches(*enc, test, multiclass));
    result.single_head_auc.push_back(
        score_probabilities(probe_probabilities(heads.back(), test_sets.back()), n_classes, test_sets.back().labels,
                            nullptr));
  }
  const auto probs = ensemble_probabilities(heads, test_sets);
  result.test_auc = score_probabilities(probs, n_classes, test_sets.front().labels, &result.per_class_auc);
  return result;
}

std::uint64_t parameter_checksum(const nn::Encoder<float>& encoder) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the raw bytes
  for (const auto& p : encoder.named_parameters("")) {
    for (float v : p.tensor.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Reports and exports

std::string area_band(double area) {
  if (area <= 0.0) return "normal";
  if (area <= 0.5) return "modest";
  return "high";
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void export_embeddings(const nn::Encoder<float>& encoder, std::span<const synth::PatchPair> pairs,
                       const std::filesystem::path& path, const nlohmann::json& config_echo) {
  std::vector<nn::Tensor> left, right;
  for (const auto& p : pairs) {
    left.push_back(p.p1);
    right.push_back(p.p2);
  }
  const std::size_t d = encoder.config().embedding_dim;
  std::vector<float> e1, e2;
  if (!pairs.empty()) {
    e1 = embed_all(encoder, left);
    e2 = embed_all(encoder, right);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# config " << config_echo.dump() << '\n';
  out << "pair_id,A,band";
  for (std::size_t j = 0; j < 2 * d; ++j) out << ",E" << j;
  out << '\n';
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out << pairs[i].pair_id << ',' << fmt(pairs[i].area) << ',' << area_band(pairs[i].area);
    for (std::size_t j = 0; j < d; ++j) out << ',' << fmt(e1[i * d + j]);
    for (std::size_t j = 0; j < d; ++j) out << ',' << fmt(e2[i * d + j]);
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"format", "psym-eval-report"},
                   {"format_version", kReportFormatVersion},
                   {"task", task},
                   {"config", config},
                   {"metrics", metrics}};
  if (!per_class_auc.empty()) j["per_class_auc"] = per_class_auc;
  if (has_sweep) {
    auto aucs = nlohmann::json::array();
    for (double a : sweep.aucs) aucs.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
    j["cutoff_sweep"] = {{"mean_auc", sweep.mean_auc},
                         {"evaluated", sweep.evaluated},
                         {"skipped", sweep.skipped},
                         {"cutoffs", sweep.cutoffs},
                         {"aucs", aucs}};
  }
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "metric,value\n";
  for (const auto& [k, v] : metrics.items()) out << k << ',' << (v.is_number() ? fmt(v.get<double>()) : v.dump()) << '\n';
  for (std::size_t k = 0; k < per_class_auc.size(); ++k) out << "class" << k << "_auc," << fmt(per_class_auc[k]) << '\n';
  if (has_sweep)
    for (std::size_t i = 0; i < sweep.cutoffs.size(); ++i)
      out << "auc_at_" << fmt(sweep.cutoffs[i]) << ',' << (std::isnan(sweep.aucs[i]) ? "" : fmt(sweep.aucs[i])) << '\n';
  return out.str();
}

void EvalReport::write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const {
  {
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + json_path.string());
    out << to_json().dump(2) << '\n';
  }
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + csv_path.string());
  out << "# config " << config.dump() << '\n' << to_csv();
}

}  // namespace psym::eval
