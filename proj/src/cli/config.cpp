#include "psym/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "psym/errors.hpp"

namespace psym::cli {

namespace {

void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    if (value.is_object() && known.at(key).is_object()) reject_unknown_keys(value, known.at(key), where + key + ".");
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*convert)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(convert(item));
    } catch (const std::logic_error&) {
      throw ConfigError("cannot parse list item '" + item + "'");
    }
  }
  return out;
}

std::size_t to_size(const std::string& s) {
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return static_cast<std::size_t>(v);
}

double to_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

}  // namespace

void EvalSettings::validate() const {
  probe.validate();
  if (cutoffs == 0) throw ConfigError("eval.cutoffs must be >= 1");
  if (!score.empty() && score != "oracle") cotrain::score_source_from_string(score);
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  eval.validate();
  if (static_cast<std::size_t>(data.patch_size) != train.encoder.input_side)
    throw ConfigError("data.patch_size (" + std::to_string(data.patch_size) + ") must equal train.encoder.input_side (" +
                      std::to_string(train.encoder.input_side) + ")");
  for (auto b : sweep.batch_sizes)
    if (b < 2) throw ConfigError("sweep batch sizes must be >= 2");
  for (auto lr : sweep.learning_rates)
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("sweep learning rates must be > 0");
  if (sweep.jobs == 0) throw ConfigError("sweep.jobs must be >= 1");
}

void to_json(nlohmann::json& j, const EvalSettings& e) {
  j = nlohmann::json{{"probe", e.probe},
                     {"cutoffs", e.cutoffs},
                     {"split", synth::to_string(e.split)},
                     {"untrained", e.untrained},
                     {"score", e.score}};
}

void to_json(nlohmann::json& j, const SweepSettings& s) {
  j = nlohmann::json{{"batch_sizes", s.batch_sizes}, {"learning_rates", s.learning_rates}, {"jobs", s.jobs}};
}

void to_json(nlohmann::json& j, const Paths& p) {
  j = nlohmann::json{{"data_dir", p.data_dir}, {"run_dir", p.run_dir}, {"checkpoint", p.checkpoint}, {"out", p.out}};
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"data", c.data}, {"train", c.train}, {"eval", c.eval}, {"sweep", c.sweep}, {"paths", c.paths}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  const nlohmann::json known = nlohmann::json(c);
  nlohmann::json body = j;
  if (body.is_object() && body.contains("format_version")) {
    if (body.at("format_version") != kConfigFormatVersion)
      throw ConfigError("unsupported config format_version " + body.at("format_version").dump());
    body.erase("format_version");
  }
  reject_unknown_keys(body, known, "");
  try {
    if (body.contains("data")) from_json(body.at("data"), c.data);
    if (body.contains("train")) from_json(body.at("train"), c.train);
    if (body.contains("eval")) {
      const auto& e = body.at("eval");
      if (e.contains("probe")) from_json(e.at("probe"), c.eval.probe);
      c.eval.cutoffs = e.value("cutoffs", c.eval.cutoffs);
      if (e.contains("split")) c.eval.split = synth::split_from_string(e.at("split").get<std::string>());
      c.eval.untrained = e.value("untrained", c.eval.untrained);
      c.eval.score = e.value("score", c.eval.score);
    }
    if (body.contains("sweep")) {
      const auto& s = body.at("sweep");
      c.sweep.batch_sizes = s.value("batch_sizes", c.sweep.batch_sizes);
      c.sweep.learning_rates = s.value("learning_rates", c.sweep.learning_rates);
      c.sweep.jobs = s.value("jobs", c.sweep.jobs);
    }
    if (body.contains("paths")) {
      const auto& p = body.at("paths");
      c.paths.data_dir = p.value("data_dir", c.paths.data_dir);
      c.paths.run_dir = p.value("run_dir", c.paths.run_dir);
      c.paths.checkpoint = p.value("checkpoint", c.paths.checkpoint);
      c.paths.out = p.value("out", c.paths.out);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json config_echo(const ExperimentConfig& c) {
  nlohmann::json j = c;
  j.erase("paths");
  j["format_version"] = kConfigFormatVersion;
  return j;
}

std::vector<std::size_t> parse_size_list(const std::string& text) { return parse_list<std::size_t>(text, &to_size); }

std::vector<double> parse_double_list(const std::string& text) { return parse_list<double>(text, &to_double); }

}  // namespace psym::cli
