#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dflnet/attacks.hpp"
#include "dflnet/data.hpp"
#include "dflnet/model.hpp"
#include "dflnet/pcl.hpp"

namespace dflnet {

enum class LossMode { ce, pcl_literal, pcl_separating };

inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::ce: return "ce";
    case LossMode::pcl_literal: return "pcl-literal";
    case LossMode::pcl_separating: return "pcl-separating";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "ce") return LossMode::ce;
  if (s == "pcl" || s == "pcl-separating") return LossMode::pcl_separating;
  if (s == "pcl-literal") return LossMode::pcl_literal;
  throw ConfigError("unknown loss mode '" + s + "' (expected ce, pcl, pcl-literal, pcl-separating)");
}

enum class LrSchedule { constant, step };

struct RunConfig {
  std::string dataset = "mnist";  // mnist | cifar10 | blobs
  std::filesystem::path data_dir = "data/mnist-5k";
  std::size_t train_size = 2000;  // 0 keeps the whole split
  std::size_t test_size = 1000;
  std::uint64_t subset_seed = 0;  // fixes the data subset independently of `seed`
  double val_fraction = 0.1;
  std::size_t blobs_classes = 10;
  std::size_t blobs_image = 16;
  double blobs_noise = 0.05;

  BackboneSpec backbone;
  bool dfl = false;
  LossMode loss = LossMode::ce;
  PclConfig pcl;

  PoisonPolicy poison;
  std::size_t poison_warmup_epochs = 0;  // linear epsilon ramp
  std::optional<double> epsilon;          // dataset default when unset
  std::vector<AttackSpec> eval_attacks;   // test-time columns
  std::vector<AttackSpec> val_attacks;    // per-epoch validation columns
  std::size_t val_every = 1;
  bool attack_pcl = false;  // attacks ascend the training objective instead of CE

  std::size_t epochs = 10;
  double lr = 0.1;
  double momentum = 0.9;
  LrSchedule lr_schedule = LrSchedule::constant;
  std::size_t lr_step_epochs = 10;
  double lr_gamma = 0.1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;  // empty: nothing is written
  bool checkpoints = true;
  bool wall_clock = false;  // wall_ms stays 0 so metrics files are reproducible

  RunConfig() {
    AttackSpec fgsm, pgd, cw;
    fgsm.family = AttackFamily::fgsm;
    pgd.family = AttackFamily::pgd;
    cw.family = AttackFamily::cw;
    eval_attacks = {fgsm, pgd, cw};
    val_attacks = {pgd};
  }

  double default_epsilon() const { return dataset == "cifar10" ? 0.03 : 0.3; }
  double resolved_epsilon() const { return epsilon.value_or(default_epsilon()); }

  // Loss weights as used by the objective; CE mode zeroes the regularizers.
  PclConfig objective() const {
    PclConfig c = pcl;
    if (loss == LossMode::ce) {
      c.weight_intra = 0.0;
      c.weight_inter = 0.0;
    } else {
      c.mode = loss == LossMode::pcl_literal ? PclMode::literal : PclMode::separating;
    }
    return c;
  }

  // Copies the resolved epsilon into every attack spec.
  void resolve() {
    const double eps = resolved_epsilon();
    poison.attack.epsilon = eps;
    for (auto& a : eval_attacks) a.epsilon = eps;
    for (auto& a : val_attacks) a.epsilon = eps;
  }

  void validate() const {
    if (dataset != "mnist" && dataset != "cifar10" && dataset != "blobs") {
      throw ConfigError("unknown dataset '" + dataset + "' (expected mnist, cifar10, blobs)");
    }
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must be in [0, 1)");
    if (lr_step_epochs < 1) throw ConfigError("lr_step_epochs must be >= 1");
    if (!(lr_gamma > 0)) throw ConfigError("lr_gamma must be > 0");
    if (val_every < 1) throw ConfigError("val_every must be >= 1");
    if (dataset == "blobs" && (blobs_classes < 2 || blobs_image < 4)) {
      throw ConfigError("blobs need >= 2 classes and image size >= 4");
    }
    if (epsilon && !(*epsilon >= 0)) throw ConfigError("eps must be >= 0");
    pcl.validate();
    poison.validate();
    for (const auto& a : eval_attacks) a.validate();
    for (const auto& a : val_attacks) a.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected on/off, got '" + v + "'");
}

inline std::string fmt_bool(bool b) { return b ? "on" : "off"; }

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Attack lists share everything but the family: "fgsm, pgd, cw".
inline void set_families(std::vector<AttackSpec>& list, const std::string& v) {
  AttackSpec proto = list.empty() ? AttackSpec{} : list.front();
  list.clear();
  for (const auto& name : split_list(v)) {
    AttackSpec a = proto;
    a.family = parse_attack_family(name);
    list.push_back(a);
  }
}

inline std::string families(const std::vector<AttackSpec>& list) {
  std::string s;
  for (const auto& a : list) s += (s.empty() ? "" : ",") + std::string(to_string(a.family));
  return s.empty() ? "none" : s;
}

template <typename F>
void for_attacks(std::vector<AttackSpec>& list, F&& f) {
  for (auto& a : list) f(a);
}

struct Setting {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::map<std::string, Setting>& settings() {
  using D = double;
  using U = std::size_t;
  static const std::map<std::string, Setting> table = [] {
    std::map<std::string, Setting> t;
    auto sz = [&t](const char* name, U RunConfig::*m) {
      t[name] = {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<U>(k, v); },
                 [m](const RunConfig& c) { return std::to_string(c.*m); }};
    };
    auto dbl = [&t](const char* name, D RunConfig::*m) {
      t[name] = {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<D>(k, v); },
                 [m](const RunConfig& c) { return fmt_double(c.*m); }};
    };
    auto flag = [&t](const char* name, bool RunConfig::*m) {
      t[name] = {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
                 [m](const RunConfig& c) { return fmt_bool(c.*m); }};
    };

    t["dataset"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.dataset = v; },
                    [](const RunConfig& c) { return c.dataset; }};
    t["data_dir"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
                     [](const RunConfig& c) { return c.data_dir.string(); }};
    sz("train_size", &RunConfig::train_size);
    sz("test_size", &RunConfig::test_size);
    t["subset_seed"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.subset_seed = parse_number<std::uint64_t>(k, v); },
        [](const RunConfig& c) { return std::to_string(c.subset_seed); }};
    dbl("val_fraction", &RunConfig::val_fraction);
    sz("blobs_classes", &RunConfig::blobs_classes);
    sz("blobs_image", &RunConfig::blobs_image);
    dbl("blobs_noise", &RunConfig::blobs_noise);

    t["stages"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.backbone.stages = parse_number<U>(k, v); },
                   [](const RunConfig& c) { return std::to_string(c.backbone.stages); }};
    t["blocks_per_stage"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.backbone.blocks_per_stage = parse_number<U>(k, v); },
        [](const RunConfig& c) { return std::to_string(c.backbone.blocks_per_stage); }};
    t["base_width"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.backbone.base_width = parse_number<U>(k, v); },
        [](const RunConfig& c) { return std::to_string(c.backbone.base_width); }};
    t["dfl_channels"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.backbone.dfl_channels = parse_number<U>(k, v); },
        [](const RunConfig& c) { return std::to_string(c.backbone.dfl_channels); }};
    flag("dfl", &RunConfig::dfl);

    t["loss"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.loss = parse_loss_mode(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.loss)); }};
    auto pcl_dbl = [&t](const char* name, D PclConfig::*m) {
      t[name] = {[m](RunConfig& c, const std::string& k, const std::string& v) { c.pcl.*m = parse_number<D>(k, v); },
                 [m](const RunConfig& c) { return fmt_double(c.pcl.*m); }};
    };
    pcl_dbl("pcl_weight_ce", &PclConfig::weight_ce);
    pcl_dbl("pcl_weight_intra", &PclConfig::weight_intra);
    pcl_dbl("pcl_weight_inter", &PclConfig::weight_inter);
    pcl_dbl("pcl_margin", &PclConfig::margin);
    pcl_dbl("pcl_clamp_delta", &PclConfig::clamp_delta);
    t["pcl_tie_centroids"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.pcl.tie_centroids = parse_bool(k, v); },
        [](const RunConfig& c) { return fmt_bool(c.pcl.tie_centroids); }};

    t["eps"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.epsilon = parse_number<D>(k, v); },
                [](const RunConfig& c) { return fmt_double(c.resolved_epsilon()); }};
    t["poison_attack"] = {
        [](RunConfig& c, const std::string&, const std::string& v) { c.poison.attack.family = parse_attack_family(v); },
        [](const RunConfig& c) { return std::string(to_string(c.poison.attack.family)); }};
    t["poison_steps"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.attack.iterations = parse_number<int>(k, v); },
        [](const RunConfig& c) { return std::to_string(c.poison.attack.iterations); }};
    t["poison_step"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "auto") c.poison.attack.step.reset();
          else c.poison.attack.step = parse_number<D>(k, v);
        },
        [](const RunConfig& c) { return c.poison.attack.step ? fmt_double(*c.poison.attack.step) : std::string("auto"); }};
    t["poison_decay"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.attack.decay = parse_number<D>(k, v); },
        [](const RunConfig& c) { return fmt_double(c.poison.attack.decay); }};
    t["poison_random_start"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.attack.random_start = parse_bool(k, v); },
        [](const RunConfig& c) { return fmt_bool(c.poison.attack.random_start); }};
    t["poison_fraction"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.fraction = parse_number<D>(k, v); },
        [](const RunConfig& c) { return fmt_double(c.poison.fraction); }};
    t["poison_precomputed"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.precomputed = parse_bool(k, v); },
        [](const RunConfig& c) { return fmt_bool(c.poison.precomputed); }};
    t["poison_apply_at"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "train") c.poison.apply_at = ApplyAt::train;
          else if (v == "eval") c.poison.apply_at = ApplyAt::eval;
          else if (v == "both") c.poison.apply_at = ApplyAt::both;
          else throw ConfigError("key '" + k + "': expected train, eval or both, got '" + v + "'");
        },
        [](const RunConfig& c) {
          return std::string(c.poison.apply_at == ApplyAt::train ? "train"
                             : c.poison.apply_at == ApplyAt::eval ? "eval"
                                                                   : "both");
        }};
    sz("poison_warmup_epochs", &RunConfig::poison_warmup_epochs);

    t["eval_attacks"] = {[](RunConfig& c, const std::string&, const std::string& v) { set_families(c.eval_attacks, v); },
                         [](const RunConfig& c) { return families(c.eval_attacks); }};
    t["val_attacks"] = {[](RunConfig& c, const std::string&, const std::string& v) { set_families(c.val_attacks, v); },
                        [](const RunConfig& c) { return families(c.val_attacks); }};
    // Shared by validation and test attacks.
    auto eval_field = [&t](const char* name, auto setter, auto getter) {
      t[name] = {[setter](RunConfig& c, const std::string& k, const std::string& v) {
                   for (auto* list : {&c.eval_attacks, &c.val_attacks})
                     for_attacks(*list, [&](AttackSpec& a) { setter(a, k, v); });
                 },
                 [getter](const RunConfig& c) {
                   const auto& l = c.eval_attacks.empty() ? c.val_attacks : c.eval_attacks;
                   return l.empty() ? getter(AttackSpec{}) : getter(l.front());
                 }};
    };
    eval_field(
        "eval_steps", [](AttackSpec& a, const std::string& k, const std::string& v) { a.iterations = parse_number<int>(k, v); },
        [](const AttackSpec& a) { return std::to_string(a.iterations); });
    eval_field(
        "eval_random_start",
        [](AttackSpec& a, const std::string& k, const std::string& v) { a.random_start = parse_bool(k, v); },
        [](const AttackSpec& a) { return fmt_bool(a.random_start); });
    eval_field(
        "eval_decay", [](AttackSpec& a, const std::string& k, const std::string& v) { a.decay = parse_number<D>(k, v); },
        [](const AttackSpec& a) { return fmt_double(a.decay); });
    eval_field(
        "cw_c", [](AttackSpec& a, const std::string& k, const std::string& v) { a.cw_c = parse_number<D>(k, v); },
        [](const AttackSpec& a) { return fmt_double(a.cw_c); });
    eval_field(
        "cw_steps", [](AttackSpec& a, const std::string& k, const std::string& v) { a.cw_steps = parse_number<int>(k, v); },
        [](const AttackSpec& a) { return std::to_string(a.cw_steps); });
    eval_field(
        "cw_lr", [](AttackSpec& a, const std::string& k, const std::string& v) { a.cw_lr = parse_number<D>(k, v); },
        [](const AttackSpec& a) { return fmt_double(a.cw_lr); });
    sz("val_every", &RunConfig::val_every);
    flag("attack_pcl", &RunConfig::attack_pcl);

    sz("epochs", &RunConfig::epochs);
    dbl("lr", &RunConfig::lr);
    dbl("momentum", &RunConfig::momentum);
    t["lr_schedule"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                          if (v == "constant") c.lr_schedule = LrSchedule::constant;
                          else if (v == "step") c.lr_schedule = LrSchedule::step;
                          else throw ConfigError("key '" + k + "': expected constant or step, got '" + v + "'");
                        },
                        [](const RunConfig& c) {
                          return std::string(c.lr_schedule == LrSchedule::constant ? "constant" : "step");
                        }};
    sz("lr_step_epochs", &RunConfig::lr_step_epochs);
    dbl("lr_gamma", &RunConfig::lr_gamma);
    sz("batch_size", &RunConfig::batch_size);
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    t["output_dir"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
                       [](const RunConfig& c) { return c.output_dir.string(); }};
    flag("checkpoints", &RunConfig::checkpoints);
    flag("wall_clock", &RunConfig::wall_clock);
    return t;
  }();
  return table;
}

}  // namespace detail

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::settings();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, key, value);
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::settings()) keys.push_back(k);
  return keys;
}

struct ParsedConfig {
  RunConfig config;
  std::set<std::string> keys;  // keys present in the text
};

// `key = value` per line; `#` starts a comment at line start or after blanks.
inline ParsedConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  ParsedConfig out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '#' && (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": expected 'key = value'");
    if (!out.keys.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      apply_setting(out.config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    } catch (const InputError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return out;
}

inline ParsedConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

// Seed used when neither the config nor the command line sets one.
inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("DFLNET_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return detail::parse_number<std::uint64_t>("DFLNET_SEED", v);
}

// Every key with its current value; parses back to an equal configuration.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, s] : detail::settings()) {
    const auto v = s.get(cfg);
    if (!v.empty()) out += k + " = " + v + "\n";  // an empty path is the default
  }
  return out;
}

}  // namespace dflnet
