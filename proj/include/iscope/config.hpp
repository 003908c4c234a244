#pragma once

// Line-oriented experiment configuration:
//
//   # comment
//   experiment = chaos
//   optimizer.learning_rate = 0.5
//   grid.t0 = 0, 50, 100
//
// Keys are dotted; lists are comma separated; an empty value is an empty
// list. Unknown or repeated keys are errors.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "iscope/error.hpp"
#include "iscope/experiment_config.hpp"

namespace iscope {

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t to_u64(const std::string& v, std::size_t line) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("expected a non-negative integer, got '" + v + "'", line);
  return out;
}

inline double to_double(const std::string& v, std::size_t line) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("expected a number, got '" + v + "'", line);
  return out;
}

inline bool to_bool(const std::string& v, std::size_t line) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("expected true or false, got '" + v + "'", line);
}

inline std::vector<std::uint64_t> to_u64_list(const std::string& v, std::size_t line) {
  std::vector<std::uint64_t> out;
  if (v.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(to_u64(trim(v.substr(start, comma - start)), line));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s;
}

template <class E>
E to_enum(const std::string& v, std::size_t line, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (v == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError("unknown value '" + v + "' (expected one of: " + names + ")", line);
}

template <class E>
std::string from_enum(E e, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, x] : options)
    if (x == e) return name;
  return "?";
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace config_detail

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&, std::size_t)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  using C = ExperimentConfig;
  static const auto arch_names = {std::pair{"mlp", Architecture::mlp}, std::pair{"convnet-small", Architecture::convnet_small}};
  static const auto act_names = {std::pair{"relu", Activation::relu}, std::pair{"tanh", Activation::tanh}};
  static const auto loss_names = {std::pair{"cross-entropy", LossKind::cross_entropy},
                                  std::pair{"mse", LossKind::mean_squared_error}};
  static const auto norm_names = {std::pair{"l2", NormKind::l2}, std::pair{"linf", NormKind::linf}};
  static const auto exp_names = {std::pair{"train", ExperimentKind::train}, std::pair{"chaos", ExperimentKind::chaos},
                                 std::pair{"cone", ExperimentKind::cone}, std::pair{"switch", ExperimentKind::switch_sweep},
                                 std::pair{"kernel-grid", ExperimentKind::kernel_grid}};
  static const auto scal_names = {std::pair{"logit-sum", ScalarizationMode::logit_sum},
                                  std::pair{"true-class", ScalarizationMode::true_class},
                                  std::pair{"random-projection", ScalarizationMode::random_projection}};

  auto u64 = [](std::string name, std::string doc, auto member) {
    return ConfigKey{std::move(name), std::move(doc),
                     [member](C& c, const std::string& v, std::size_t line) {
                       using T = std::remove_reference_t<decltype(member(c))>;
                       member(c) = static_cast<T>(to_u64(v, line));
                     },
                     [member](const C& c) { return std::to_string(member(const_cast<C&>(c))); }};
  };
  auto real = [](std::string name, std::string doc, auto member) {
    return ConfigKey{std::move(name), std::move(doc),
                     [member](C& c, const std::string& v, std::size_t line) { member(c) = to_double(v, line); },
                     [member](const C& c) { return fmt(member(const_cast<C&>(c))); }};
  };
  auto text = [](std::string name, std::string doc, auto member) {
    return ConfigKey{std::move(name), std::move(doc), [member](C& c, const std::string& v, std::size_t) { member(c) = v; },
                     [member](const C& c) { return member(const_cast<C&>(c)); }};
  };
  auto list = [](std::string name, std::string doc, auto member) {
    return ConfigKey{std::move(name), std::move(doc),
                     [member](C& c, const std::string& v, std::size_t line) {
                       auto& dst = member(c);
                       dst.clear();
                       for (auto x : to_u64_list(v, line)) dst.push_back(static_cast<typename std::decay_t<decltype(dst)>::value_type>(x));
                     },
                     [member](const C& c) { return fmt_list(member(const_cast<C&>(c))); }};
  };
  auto flag = [](std::string name, std::string doc, auto member) {
    return ConfigKey{std::move(name), std::move(doc),
                     [member](C& c, const std::string& v, std::size_t line) { member(c) = to_bool(v, line); },
                     [member](const C& c) { return std::string(member(const_cast<C&>(c)) ? "true" : "false"); }};
  };
  auto choice = [](std::string name, std::string doc, auto member, const auto& names) {
    return ConfigKey{std::move(name), std::move(doc),
                     [member, &names](C& c, const std::string& v, std::size_t line) { member(c) = to_enum(v, line, names); },
                     [member, &names](const C& c) { return from_enum(member(const_cast<C&>(c)), names); }};
  };

  static const std::vector<ConfigKey> keys = {
      choice("experiment", "train | chaos | cone | switch | kernel-grid", [](C& c) -> auto& { return c.experiment; }, exp_names),
      list("seeds", "replicate seeds; each drives initialization, batch order and perturbation direction",
           [](C& c) -> auto& { return c.seeds; }),
      choice("model.arch", "mlp | convnet-small", [](C& c) -> auto& { return c.arch; }, arch_names),
      list("model.hidden", "hidden widths (mlp) or conv channel counts (convnet-small)", [](C& c) -> auto& { return c.hidden; }),
      choice("model.activation", "relu | tanh", [](C& c) -> auto& { return c.activation; }, act_names),
      flag("model.bias", "include bias terms", [](C& c) -> auto& { return c.bias; }),
      text("dataset.kind", "two-moons | gaussian-mixture | spirals | csv | idx", [](C& c) -> auto& { return c.dataset.kind; }),
      u64("dataset.n", "synthetic training points", [](C& c) -> auto& { return c.dataset.n; }),
      u64("dataset.n_test", "synthetic test points", [](C& c) -> auto& { return c.dataset.n_test; }),
      real("dataset.noise", "synthetic noise level", [](C& c) -> auto& { return c.dataset.noise; }),
      u64("dataset.classes", "classes (ignored for two-moons)", [](C& c) -> auto& { return c.dataset.classes; }),
      u64("dataset.seed", "seed of the synthetic sample", [](C& c) -> auto& { return c.dataset.seed; }),
      text("dataset.path", "csv or idx training file", [](C& c) -> auto& { return c.dataset.path; }),
      text("dataset.labels_path", "idx training labels", [](C& c) -> auto& { return c.dataset.labels_path; }),
      text("dataset.test_path", "csv or idx test file", [](C& c) -> auto& { return c.dataset.test_path; }),
      text("dataset.test_labels_path", "idx test labels", [](C& c) -> auto& { return c.dataset.test_labels_path; }),
      u64("dataset.limit", "idx: images sampled from each file (required for idx)", [](C& c) -> auto& { return c.dataset.limit; }),
      real("optimizer.learning_rate", "initial learning rate", [](C& c) -> auto& { return c.optimizer.learning_rate; }),
      real("optimizer.momentum", "heavy-ball momentum", [](C& c) -> auto& { return c.optimizer.momentum; }),
      real("optimizer.weight_decay", "L2 weight decay", [](C& c) -> auto& { return c.optimizer.weight_decay; }),
      real("optimizer.lr_drop_factor", "learning rate multiplier at each milestone",
           [](C& c) -> auto& { return c.optimizer.lr_drop_factor; }),
      list("optimizer.milestones", "milestones in iterations", [](C& c) -> auto& { return c.optimizer.milestones; }),
      list("optimizer.milestone_epochs", "milestones in epochs (converted to iterations)",
           [](C& c) -> auto& { return c.milestone_epochs; }),
      u64("optimizer.total_iterations", "training horizon T", [](C& c) -> auto& { return c.optimizer.total_iterations; }),
      u64("optimizer.batch_size", "minibatch size", [](C& c) -> auto& { return c.batch_size; }),
      choice("train.loss", "cross-entropy | mse", [](C& c) -> auto& { return c.loss; }, loss_names),
      flag("train.augment", "random flips and shifts for image data", [](C& c) -> auto& { return c.augment; }),
      u64("train.checkpoint_interval", "iterations between stored checkpoints",
          [](C& c) -> auto& { return c.checkpoint_interval; }),
      real("perturbation.magnitude", "norm of the injected perturbation", [](C& c) -> auto& { return c.perturbation_magnitude; }),
      choice("perturbation.norm", "l2 | linf", [](C& c) -> auto& { return c.perturbation_norm; }, norm_names),
      list("grid.t0", "perturbation iterations", [](C& c) -> auto& { return c.t0s; }),
      list("grid.t1", "comparison iterations", [](C& c) -> auto& { return c.t1s; }),
      list("grid.tau", "reference iterations for kernel sweeps", [](C& c) -> auto& { return c.taus; }),
      list("grid.dt", "offsets for adjacent kernel sweeps", [](C& c) -> auto& { return c.dts; }),
      list("grid.switch", "iterations at which training switches to the linearized model",
           [](C& c) -> auto& { return c.switch_ts; }),
      u64("probe.size", "probe examples for kernels", [](C& c) -> auto& { return c.probe_size; }),
      choice("probe.scalarization", "logit-sum | true-class | random-projection", [](C& c) -> auto& { return c.scalarization; },
             scal_names),
      u64("probe.projection_seed", "seed of the random-projection scalarizer", [](C& c) -> auto& { return c.projection_seed; }),
      u64("metrics.alpha_points", "interpolation points for the loss barrier", [](C& c) -> auto& { return c.alpha_points; }),
      text("metrics.inflection_rule", "min | mean", [](C& c) -> auto& { return c.inflection_rule; }),
  };
  return keys;
}

/// Nearest known key by edit distance. Bare keys are also matched against
/// the last component of dotted keys.
inline std::string suggest_key(const std::string& unknown) {
  std::string best;
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (const auto& k : config_keys()) {
    std::size_t d = config_detail::levenshtein(unknown, k.name);
    const auto dot = k.name.rfind('.');
    if (unknown.find('.') == std::string::npos && dot != std::string::npos)
      d = std::min(d, config_detail::levenshtein(unknown, std::string_view(k.name).substr(dot + 1)));
    if (d < best_d) {
      best_d = d;
      best = k.name;
    }
  }
  return best;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::vector<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = config_detail::trim(std::string_view(raw).substr(0, hash));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    const std::string key = config_detail::trim(std::string_view(s).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(s).substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key before '='", line);
    const auto& keys = config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
    if (it == keys.end()) throw ConfigError("unknown key '" + key + "'; did you mean '" + suggest_key(key) + "'?", line);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) throw ConfigError("duplicate key '" + key + "'", line);
    seen.push_back(key);
    it->set(cfg, value, line);
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Every key with its value and documentation; parses back to the same config.
inline std::string emit_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : config_keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
    if (sec != section && out.tellp() > 0) out << '\n';
    section = sec;
    out << "# " << k.doc << '\n' << k.name << " = " << k.get(cfg) << '\n';
  }
  return out.str();
}

/// Key reference for --help.
inline std::string config_reference() {
  const ExperimentConfig defaults;
  std::ostringstream out;
  for (const auto& k : config_keys()) out << "  " << k.name << " = " << k.get(defaults) << "\n      " << k.doc << '\n';
  return out.str();
}

}  // namespace iscope
