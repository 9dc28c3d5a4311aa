#include "kalm/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kalm/errors.hpp"

namespace kalm {

void ExperimentConfig::apply_profile() {
  if (profile == "desk") {
    model.embed_dim = 64;
    model.hidden_dim = 128;
    model.layers = 1;
    model.type_dim = 16;
  } else if (profile == "paper") {
    model.embed_dim = 400;
    model.hidden_dim = 1150;
    model.layers = 3;
    model.type_dim = 100;
  } else {
    throw ConfigError("profile must be desk or paper (got '" + profile + "')");
  }
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path);
}

static bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

ExperimentConfig ExperimentConfig::parse_text(const std::string& text,
                                              const std::string& origin) {
  ExperimentConfig cfg;
  // Profile is applied first so explicit dimension keys override it.
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto strip = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    if (strip(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = strip(line.substr(0, eq));
    std::string val = strip(line.substr(eq + 1));
    if (!kv.emplace(key, val).second)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }

  if (kv.count("profile")) cfg.profile = kv["profile"];
  cfg.apply_profile();

  std::set<std::string> known;
  auto take = [&](const std::string& key, auto setter) {
    known.insert(key);
    auto it = kv.find(key);
    if (it != kv.end()) setter(it->second);
  };
  auto as_double = [&](const std::string& key, double& out) {
    take(key, [&, key](const std::string& v) {
      try {
        out = std::stod(v);
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
      }
    });
  };
  auto as_size = [&](const std::string& key, size_t& out) {
    take(key, [&, key](const std::string& v) {
      try {
        long long n = std::stoll(v);
        if (n < 0) throw std::out_of_range("negative");
        out = static_cast<size_t>(n);
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected nonnegative integer, got '" + v +
                          "'");
      }
    });
  };
  auto as_string = [&](const std::string& key, std::string& out) {
    take(key, [&](const std::string& v) { out = v; });
  };
  auto as_bool = [&](const std::string& key, bool& out) {
    take(key, [&, key](const std::string& v) { out = parse_bool(v, key); });
  };

  known.insert("profile");
  as_string("train", cfg.train_path);
  as_string("valid", cfg.valid_path);
  as_string("test", cfg.test_path);
  as_string("kb", cfg.kb_path);
  as_string("prior", cfg.prior_path);
  as_string("gold", cfg.gold_path);
  as_string("type_map", cfg.type_map_path);
  as_string("mode", cfg.mode);
  as_bool("feedback", cfg.feedback);
  as_bool("lowercase", cfg.lowercase);
  as_size("min_count", cfg.min_count);
  as_double("prior_smoothing", cfg.prior_smoothing);

  as_size("embed_dim", cfg.model.embed_dim);
  as_size("hidden_dim", cfg.model.hidden_dim);
  as_size("layers", cfg.model.layers);
  as_size("type_dim", cfg.model.type_dim);

  as_double("lr", cfg.train.lr);
  as_double("weight_decay", cfg.train.weight_decay);
  as_double("grad_clip", cfg.train.grad_clip);
  take("nonmono", [&](const std::string& v) { cfg.train.nonmono = std::stoi(v); });
  as_double("wdrop", cfg.train.dropout.wdrop);
  as_double("dropouth", cfg.train.dropout.dropouth);
  as_double("dropouto", cfg.train.dropout.dropouto);
  as_double("dropoute", cfg.train.dropout.dropoute);
  as_double("dropouti", cfg.train.dropout.dropouti);
  as_double("ar", cfg.train.ar);
  as_double("tar", cfg.train.tar);
  as_double("kl_lambda", cfg.train.kl_lambda);
  as_size("batch_size", cfg.train.batch_size);
  as_size("epochs", cfg.train.epochs);
  take("seed", [&](const std::string& v) { cfg.train.seed = std::stoull(v); });

  as_double("alpha", cfg.decode.alpha);
  as_double("beta", cfg.decode.beta);
  as_bool("use_prior", cfg.decode.use_prior);

  for (const auto& [key, val] : kv)
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");

  if (cfg.mode != "uni" && cfg.mode != "bi")
    throw ConfigError("mode must be uni or bi (got '" + cfg.mode + "')");
  cfg.model.bidirectional = (cfg.mode == "bi");
  cfg.model.feedback = cfg.feedback;
  return cfg;
}

void ExperimentConfig::validate() const {
  train.validate();
  decode.validate();
  if (model.embed_dim == 0 || model.hidden_dim == 0 || model.layers == 0 ||
      model.type_dim == 0)
    throw ConfigError("model dimensions must be positive");
  if (prior_smoothing <= 0.0) throw ConfigError("prior_smoothing must be positive");
  for (const std::string& p :
       {train_path, valid_path, test_path, kb_path, prior_path, gold_path, type_map_path}) {
    if (!p.empty() && !std::filesystem::exists(p))
      throw DataError("configured file does not exist: " + p);
  }
}

}  // namespace kalm
