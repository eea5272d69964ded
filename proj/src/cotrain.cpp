#include "psym/cotrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "psym/errors.hpp"
#include "psym/eval.hpp"
#include "psym/nn/ops.hpp"

namespace psym::cotrain {

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::CrossBce: return "cross-bce";
    case LossMode::Triplet: return "triplet";
    case LossMode::SslMix: return "ssl-mix";
  }
  return "cross-bce";
}

std::string to_string(LabelSource s) { return s == LabelSource::Distance ? "distance" : "logit"; }

std::string to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::Q: return "q";
    case ScoreSource::P: return "p";
    case ScoreSource::D: return "d";
  }
  return "q";
}

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "cross-bce") return LossMode::CrossBce;
  if (s == "triplet") return LossMode::Triplet;
  if (s == "ssl-mix") return LossMode::SslMix;
  throw ConfigError("unknown loss '" + s + "' (expected cross-bce, triplet or ssl-mix)");
}

LabelSource label_source_from_string(const std::string& s) {
  if (s == "distance") return LabelSource::Distance;
  if (s == "logit") return LabelSource::Logit;
  throw ConfigError("unknown soft-label source '" + s + "' (expected distance or logit)");
}

ScoreSource score_source_from_string(const std::string& s) {
  if (s == "q") return ScoreSource::Q;
  if (s == "p") return ScoreSource::P;
  if (s == "d") return ScoreSource::D;
  throw ConfigError("unknown score source '" + s + "' (expected q, p or d)");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (warmup_epochs >= epochs) throw ConfigError("warmup_epochs must be smaller than epochs");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (accumulation_microbatch > 0 &&
      (accumulation_microbatch > batch_size || batch_size % accumulation_microbatch != 0))
    throw ConfigError("batch_size must be a multiple of accumulation_microbatch");
  altloss::TripletConfig{triplet_margin}.validate();
  if (!std::isfinite(head_init_scale) || head_init_scale < 0.0) throw ConfigError("head_init_scale must be >= 0");
  encoder.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"accumulation_microbatch", c.accumulation_microbatch},
                     {"seed", c.seed},
                     {"warmup_epochs", c.warmup_epochs},
                     {"gmm_refit", "per-epoch"},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"dual", c.dual},
                     {"loss", to_string(c.loss)},
                     {"soft_label_source", to_string(c.label_source)},
                     {"score", to_string(c.score)},
                     {"triplet_margin", c.triplet_margin},
                     {"head_init_scale", c.head_init_scale},
                     {"encoder", c.encoder}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.accumulation_microbatch = j.value("accumulation_microbatch", c.accumulation_microbatch);
  c.seed = j.value("seed", c.seed);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  if (j.contains("gmm_refit") && j.at("gmm_refit") != "per-epoch")
    throw ConfigError("only per-epoch GMM refitting is supported");
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.dual = j.value("dual", c.dual);
  if (j.contains("loss")) c.loss = loss_mode_from_string(j.at("loss").get<std::string>());
  if (j.contains("soft_label_source"))
    c.label_source = label_source_from_string(j.at("soft_label_source").get<std::string>());
  if (j.contains("score")) c.score = score_source_from_string(j.at("score").get<std::string>());
  c.triplet_margin = j.value("triplet_margin", c.triplet_margin);
  c.head_init_scale = j.value("head_init_scale", c.head_init_scale);
  if (j.contains("encoder")) from_json(j.at("encoder"), c.encoder);
}

// ---------------------------------------------------------------------------
// Networks

template <typename T>
SiameseNet<T>::SiameseNet(const nn::EncoderConfig& encoder, std::uint64_t head_seed, double head_init_scale)
    : encoder_(encoder) {
  const std::size_t in = 2 * encoder.embedding_dim;
  std::mt19937_64 rng(head_seed);
  std::vector<T> w = nn::he_uniform<T>(in, in, rng);
  for (auto& v : w) v *= static_cast<T>(head_init_scale);
  head_w_ = nn::BasicTensor<T>::parameter({1, in}, std::move(w));
  head_b_ = nn::BasicTensor<T>::parameter({1}, std::vector<T>{T{0}});
}

template <typename T>
typename SiameseNet<T>::Output SiameseNet<T>::forward(const nn::BasicTensor<T>& p1,
                                                      const nn::BasicTensor<T>& p2, bool training) const {
  if (p1.shape() != p2.shape())
    throw ConfigError("pair patches differ in shape: " + nn::shape_str(p1.shape()) + " vs " +
                      nn::shape_str(p2.shape()));
  Output out;
  out.e1 = encoder_.forward(p1, training);
  out.e2 = encoder_.forward(p2, training);
  const std::size_t n = out.e1.dim(0);
  out.d = nn::euclidean_distance(out.e1, out.e2);
  out.z = nn::reshape(nn::linear(nn::concat_features(out.e1, out.e2), head_w_, head_b_), {n});
  nn::check_finite(out.z, "head.linear");
  out.q = nn::sigmoid(out.z);
  return out;
}

template <typename T>
std::vector<nn::ParamGroup<T>> SiameseNet<T>::param_groups(const std::string& prefix) const {
  auto groups = encoder_.param_groups(prefix);
  groups.push_back({prefix + "head.weight", {head_w_}, false});
  groups.push_back({prefix + "head.bias", {head_b_}, true});
  return groups;
}

template <typename T>
std::vector<nn::NamedParameter<T>> SiameseNet<T>::named_parameters(const std::string& prefix) const {
  auto params = encoder_.named_parameters(prefix + "encoder.");
  params.push_back({prefix + "head.weight", head_w_});
  params.push_back({prefix + "head.bias", head_b_});
  return params;
}

template class SiameseNet<float>;
template class SiameseNet<double>;

// ---------------------------------------------------------------------------
// Scalar losses

double soft_bce_loss(double P, double q) {
  const double qc = std::clamp(q, nn::kProbClamp, 1.0 - nn::kProbClamp);
  return -((1.0 - P) * std::log(qc) + P * std::log(1.0 - qc));
}

CrossLosses cross_losses(double P1, double P2, double q1, double q2) {
  CrossLosses c;
  c.L1 = soft_bce_loss(P2, q1);
  c.L2 = soft_bce_loss(P1, q2);
  c.L = (c.L1 + c.L2) / 2.0;
  return c;
}

// ---------------------------------------------------------------------------
// Pair storage and inference

PairBank PairBank::from_pairs(std::span<const synth::PatchPair> pairs) {
  PairBank bank;
  if (pairs.empty()) return bank;
  bank.side = static_cast<std::size_t>(pairs.front().size);
  const std::size_t per = bank.side * bank.side;
  bank.p1.reserve(per * pairs.size());
  bank.p2.reserve(per * pairs.size());
  for (const auto& p : pairs) {
    if (static_cast<std::size_t>(p.size) != bank.side || p.p1.size() != per || p.p2.size() != per)
      throw ConfigError("all pairs must share one patch size");
    bank.p1.insert(bank.p1.end(), p.p1.data().begin(), p.p1.data().end());
    bank.p2.insert(bank.p2.end(), p.p2.data().begin(), p.p2.data().end());
    bank.area.push_back(p.area);
    bank.pair_id.push_back(p.pair_id);
  }
  return bank;
}

std::pair<nn::Tensor, nn::Tensor> PairBank::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = side * side;
  std::vector<float> a(per * indices.size()), b(per * indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto off = static_cast<std::ptrdiff_t>(indices[i] * per);
    std::copy_n(p1.begin() + off, per, a.begin() + static_cast<std::ptrdiff_t>(i * per));
    std::copy_n(p2.begin() + off, per, b.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  const nn::Shape shape{indices.size(), side, side};
  return {nn::Tensor(shape, std::move(a)), nn::Tensor(shape, std::move(b))};
}

std::pair<nn::Tensor, nn::Tensor> PairBank::range(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return batch(idx);
}

namespace {

constexpr std::size_t kInferenceChunk = 256;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

nn::EncoderConfig encoder_for(const TrainConfig& c, std::uint64_t which) {
  nn::EncoderConfig e = c.encoder;
  e.seed = mix_seed(mix_seed(c.seed, c.encoder.seed), which);
  return e;
}

}  // namespace

PairForward pair_forward(const SiameseNet<float>& net, const synth::PatchPair& pair) {
  nn::NoGradGuard guard;
  const std::size_t s = static_cast<std::size_t>(pair.size);
  auto out = net.forward(pair.p1.reshaped({1, s, s}), pair.p2.reshaped({1, s, s}));
  PairForward r;
  r.e1.assign(out.e1.data().begin(), out.e1.data().end());
  r.e2.assign(out.e2.data().begin(), out.e2.data().end());
  r.D = out.d.item();
  r.z = out.z.item();
  r.q = out.q.item();
  return r;
}

NetScores score_bank(const SiameseNet<float>& net, const PairBank& bank) {
  nn::NoGradGuard guard;
  NetScores s;
  s.D.reserve(bank.size());
  s.z.reserve(bank.size());
  s.q.reserve(bank.size());
  for (std::size_t i = 0; i < bank.size(); i += kInferenceChunk) {
    const std::size_t end = std::min(bank.size(), i + kInferenceChunk);
    auto [a, b] = bank.range(i, end);
    auto out = net.forward(a, b);
    for (float v : out.d.data()) s.D.push_back(v);
    for (float v : out.z.data()) s.z.push_back(v);
    for (float v : out.q.data()) s.q.push_back(v);
  }
  return s;
}

// ---------------------------------------------------------------------------
// State

CoTrainState::CoTrainState(const TrainConfig& cfg)
    : config(cfg),
      net1(encoder_for(cfg, 1), mix_seed(cfg.seed, 101), cfg.head_init_scale),
      net2(encoder_for(cfg, 2), mix_seed(cfg.seed, 102), cfg.head_init_scale),
      opt1(nn::OptState::lars(cfg.learning_rate, cfg.weight_decay, cfg.momentum)),
      opt2(nn::OptState::lars(cfg.learning_rate, cfg.weight_decay, cfg.momentum)) {
  config.validate();
}

namespace {

std::vector<double> labels_from(const gmm::GmmParams& g, const NetScores& s, LabelSource src) {
  std::vector<double> P(s.D.size());
  for (std::size_t i = 0; i < P.size(); ++i)
    P[i] = src == LabelSource::Distance ? gmm::posterior_abnormal(g, s.D[i]) : altloss::logit_soft_label(g, s.z[i]);
  return P;
}

const std::vector<double>& fit_input(const NetScores& s, LabelSource src, const char* net) {
  const auto& v = src == LabelSource::Distance ? s.D : s.z;
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(net) + " produced a non-finite pair " + to_string(src));
  return v;
}

}  // namespace

SoftLabels refit_soft_labels(CoTrainState& state, const PairBank& train) {
  const auto src = state.config.label_source;
  SoftLabels labels;
  const auto s1 = score_bank(state.net1, train);
  state.gmm1 = gmm::fit_gmm(fit_input(s1, src, "net1"));
  labels.P1 = labels_from(state.gmm1, s1, src);
  if (state.config.dual) {
    const auto s2 = score_bank(state.net2, train);
    state.gmm2 = gmm::fit_gmm(fit_input(s2, src, "net2"));
    labels.P2 = labels_from(state.gmm2, s2, src);
  } else {
    state.gmm2 = state.gmm1;
    labels.P2 = labels.P1;
  }
  return labels;
}

std::vector<double> pair_scores(const CoTrainState& state, const PairBank& pairs) {
  const auto& cfg = state.config;
  std::vector<NetScores> nets{score_bank(state.net1, pairs)};
  std::vector<const gmm::GmmParams*> mixtures{&state.gmm1};
  if (cfg.dual) {
    nets.push_back(score_bank(state.net2, pairs));
    mixtures.push_back(&state.gmm2);
  }
  std::vector<double> out(pairs.size(), 0.0);
  for (std::size_t k = 0; k < nets.size(); ++k) {
    std::vector<double> per;
    switch (cfg.score) {
      case ScoreSource::Q:
        per.resize(pairs.size());
        for (std::size_t i = 0; i < per.size(); ++i) per[i] = 1.0 - nets[k].q[i];
        break;
      case ScoreSource::P: per = labels_from(*mixtures[k], nets[k], cfg.label_source); break;
      case ScoreSource::D: per = nets[k].D; break;
    }
    for (std::size_t i = 0; i < per.size(); ++i) out[i] += per[i] / static_cast<double>(nets.size());
  }
  return out;
}

double validation_auc(const CoTrainState& state, const PairBank& val) {
  return eval::average_auc_over_cutoffs(pair_scores(state, val), val.area).mean_auc;
}

// ---------------------------------------------------------------------------
// Training

namespace {

nn::Tensor augment(const nn::Tensor& x, std::mt19937_64& rng) {
  const std::size_t n = x.dim(0), s = x.dim(1);
  nn::Tensor out = x.clone();
  auto d = out.data();
  std::normal_distribution<float> noise(0.0f, 0.03f);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    float* img = d.data() + i * s * s;
    if (flip(rng))
      for (std::size_t r = 0; r < s; ++r) std::reverse(img + r * s, img + (r + 1) * s);
    for (std::size_t k = 0; k < s * s; ++k) img[k] = std::clamp(img[k] + noise(rng), 0.0f, 1.0f);
  }
  return out;
}

struct BatchLoss {
  nn::Tensor loss;
  double l1 = 0.0;
  double l2 = 0.0;
};

nn::Tensor per_net_loss(const CoTrainState& st, const SiameseNet<float>& net, const nn::Tensor& a,
                        const nn::Tensor& b, std::span<const double> P, std::mt19937_64& rng) {
  const auto& cfg = st.config;
  switch (cfg.loss) {
    case LossMode::CrossBce: {
      auto out = net.forward(a, b, true);
      return nn::mean(nn::soft_bce_with_logits(out.z, P));
    }
    case LossMode::Triplet: {
      auto out = net.forward(a, b, true);
      return nn::mean(altloss::soft_triplet_loss(out.d, P, altloss::TripletConfig{cfg.triplet_margin}));
    }
    case LossMode::SslMix: {
      const auto& enc = net.encoder();
      altloss::ViewEmbeddings<float> v{enc.forward(augment(a, rng), true), enc.forward(augment(a, rng), true),
                                       enc.forward(augment(b, rng), true), enc.forward(augment(b, rng), true)};
      return nn::mean(altloss::ssl_mix_loss<float>(v, P));
    }
  }
  throw ConfigError("unhandled loss mode");
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void train(CoTrainState& state, const PairBank& train_pairs, const PairBank& val_pairs, const TrainHooks& hooks) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (train_pairs.size() < gmm::kMinSamples)
    throw InsufficientDataError("training split holds " + std::to_string(train_pairs.size()) + " pairs");
  if (!hooks.out_dir.empty()) std::filesystem::create_directories(hooks.out_dir);

  const auto groups1 = state.net1.param_groups("net1.");
  const auto groups2 = state.net2.param_groups("net2.");
  std::vector<std::size_t> order(train_pairs.size());

  while (state.epoch < cfg.epochs) {
    if (hooks.stop_after && state.epoch >= *hooks.stop_after) return;
    const std::size_t epoch = state.epoch + 1;
    SoftLabels labels;
    try {
      labels = refit_soft_labels(state, train_pairs);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", soft-label refit: " + e.what());
    }
    if (state.epoch < cfg.warmup_epochs) {
      std::fill(labels.P1.begin(), labels.P1.end(), 0.5);
      std::fill(labels.P2.begin(), labels.P2.end(), 0.5);
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double sum1 = 0.0, sum2 = 0.0;
    std::size_t batch_index = 0;
    std::vector<double> P_other1, P_other2;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const std::size_t micro = cfg.accumulation_microbatch ? cfg.accumulation_microbatch : batch.size();
      std::vector<std::span<const std::size_t>> micro_batches;
      for (std::size_t m = 0; m < batch.size(); m += micro)
        micro_batches.push_back(batch.subspan(m, std::min(micro, batch.size() - m)));

      double b1 = 0.0, b2 = 0.0;
      try {
        nn::accumulate_gradients(
            std::span<const std::span<const std::size_t>>(micro_batches), batch.size(),
            [&](std::span<const std::size_t> mb) {
              auto [a, b] = train_pairs.batch(mb);
              P_other1.clear();
              P_other2.clear();
              for (auto i : mb) {
                P_other1.push_back(cfg.dual ? labels.P2[i] : labels.P1[i]);
                P_other2.push_back(labels.P1[i]);
              }
              const double w = static_cast<double>(mb.size()) / static_cast<double>(batch.size());
              auto l1 = per_net_loss(state, state.net1, a, b, P_other1, rng);
              nn::check_finite(l1, "loss1");
              b1 += w * l1.item();
              if (!cfg.dual) return l1;
              auto l2 = per_net_loss(state, state.net2, a, b, P_other2, rng);
              nn::check_finite(l2, "loss2");
              b2 += w * l2.item();
              return nn::scale(nn::add(l1, l2), 0.5f);
            });
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                           e.what());
      }
      nn::lars_step<float>(state.opt1, groups1);
      if (cfg.dual) nn::lars_step<float>(state.opt2, groups2);
      for (const auto* opt : {&state.opt1, &state.opt2})
        for (const auto& buf : opt->first_moment)
          for (double v : buf)
            if (!std::isfinite(v))
              throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                                 ": optimizer update diverged (non-finite momentum)");
      const double n = static_cast<double>(batch.size());
      sum1 += b1 * n;
      sum2 += (cfg.dual ? b2 : b1) * n;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss1 = sum1 / static_cast<double>(order.size());
    m.loss2 = sum2 / static_cast<double>(order.size());
    m.loss = cfg.dual ? 0.5 * (m.loss1 + m.loss2) : m.loss1;
    m.gmm1 = state.gmm1;
    m.gmm2 = state.gmm2;
    try {
      m.val_avg_auc = val_pairs.size() ? validation_auc(state, val_pairs) : std::numeric_limits<double>::quiet_NaN();
    } catch (const UndefinedMetricError&) {
      m.val_avg_auc = std::numeric_limits<double>::quiet_NaN();
    }
    state.epoch = epoch;
    state.history.push_back(m);
    const bool improved = state.best_epoch == 0 || m.val_avg_auc > state.best_val_auc;
    if (improved) {
      state.best_val_auc = m.val_avg_auc;
      state.best_epoch = epoch;
    }
    if (!hooks.out_dir.empty()) {
      if (improved) save_state(hooks.out_dir / "best.psym", state, hooks.config_echo);
      save_state(hooks.out_dir / "last.psym", state, hooks.config_echo);
      write_text(hooks.out_dir / "metrics.csv", metrics_csv(state.history, hooks.config_echo));
    }
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
}

std::string metrics_csv(const std::vector<EpochMetrics>& history, const nlohmann::json& config_echo) {
  std::ostringstream out;
  out << "# config " << config_echo.dump() << '\n';
  out << "epoch,loss1,loss2,loss,val_avg_auc,gmm1_mean_low,gmm1_mean_high,gmm2_mean_low,gmm2_mean_high\n";
  for (const auto& m : history)
    out << m.epoch << ',' << fmt(m.loss1) << ',' << fmt(m.loss2) << ',' << fmt(m.loss) << ',' << fmt(m.val_avg_auc)
        << ',' << fmt(m.gmm1.mean_low) << ',' << fmt(m.gmm1.mean_high) << ',' << fmt(m.gmm2.mean_low) << ','
        << fmt(m.gmm2.mean_high) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

nn::Checkpoint make_checkpoint(const CoTrainState& state, const nlohmann::json& config_echo) {
  nn::Checkpoint ckpt;
  auto history = nlohmann::json::array();
  for (const auto& m : state.history)
    history.push_back({{"epoch", m.epoch},
                       {"loss1", m.loss1},
                       {"loss2", m.loss2},
                       {"loss", m.loss},
                       {"val_avg_auc", number_or_null(m.val_avg_auc)},
                       {"gmm1", m.gmm1},
                       {"gmm2", m.gmm2}});
  ckpt.metadata = {{"format", "psym-cotrain"},
                   {"config", config_echo},
                   {"train_config", state.config},
                   {"epoch", state.epoch},
                   {"optimizer", nn::to_string(state.opt1.kind)},
                   {"gmm1", state.gmm1},
                   {"gmm2", state.gmm2},
                   {"opt1", state.opt1},
                   {"opt2", state.opt2},
                   {"best_val_auc", number_or_null(state.best_val_auc)},
                   {"best_epoch", state.best_epoch},
                   {"history", history}};
  for (const auto* net : {&state.net1, &state.net2}) {
    const std::string prefix = net == &state.net1 ? "net1." : "net2.";
    for (const auto& p : net->named_parameters(prefix)) ckpt.blobs.push_back(nn::snapshot_tensor(p.name, p.tensor));
  }
  return ckpt;
}

void save_state(const std::filesystem::path& path, const CoTrainState& state, const nlohmann::json& config_echo) {
  nn::save_checkpoint(path, make_checkpoint(state, config_echo));
}

CoTrainState load_state(const std::filesystem::path& path) {
  const auto ckpt = nn::load_checkpoint(path);
  const auto& m = ckpt.metadata;
  if (m.value("format", "") != "psym-cotrain") throw DataError(path.string() + " is not a co-training checkpoint");
  try {
    CoTrainState state(m.at("train_config").get<TrainConfig>());
    for (auto* net : {&state.net1, &state.net2}) {
      const std::string prefix = net == &state.net1 ? "net1." : "net2.";
      for (auto& p : net->named_parameters(prefix)) nn::restore_tensor(ckpt.blob(p.name), p.tensor);
    }
    state.gmm1 = m.at("gmm1").get<gmm::GmmParams>();
    state.gmm2 = m.at("gmm2").get<gmm::GmmParams>();
    state.opt1 = m.at("opt1").get<nn::OptState>();
    state.opt2 = m.at("opt2").get<nn::OptState>();
    state.epoch = m.at("epoch").get<std::size_t>();
    state.best_val_auc = number_from(m.at("best_val_auc"));
    state.best_epoch = m.at("best_epoch").get<std::size_t>();
    for (const auto& h : m.at("history")) {
      EpochMetrics e;
      e.epoch = h.at("epoch").get<std::size_t>();
      e.loss1 = h.at("loss1").get<double>();
      e.loss2 = h.at("loss2").get<double>();
      e.loss = h.at("loss").get<double>();
      e.val_avg_auc = number_from(h.at("val_avg_auc"));
      e.gmm1 = h.at("gmm1").get<gmm::GmmParams>();
      e.gmm2 = h.at("gmm2").get<gmm::GmmParams>();
      state.history.push_back(e);
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
  }
}

}  // namespace psym::cotrain
