#pragma once

// Run directories: resolved config, per-seed artifacts and a manifest of
// digests. A stage is skipped when every artifact it would write is listed
// in the manifest and still matches its digest.

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "iscope/config.hpp"
#include "iscope/digest.hpp"
#include "iscope/entk.hpp"
#include "iscope/experiments.hpp"
#include "iscope/render.hpp"

namespace iscope {

inline constexpr const char* kToolVersion = "0.1.0";

struct ManifestEntry {
  std::string path;  // relative to the run directory
  std::string kind;
  std::string digest;
};

struct RunManifest {
  std::string config_digest;
  std::string tool_version = kToolVersion;
  std::map<std::string, ManifestEntry> artifacts;
  std::string created;
  std::string updated;

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& [p, e] : artifacts) a.push_back({{"path", e.path}, {"kind", e.kind}, {"digest", e.digest}});
    return {{"config_digest", config_digest}, {"tool_version", tool_version}, {"artifacts", a},
            {"created", created}, {"updated", updated}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_digest = j.at("config_digest").get<std::string>();
    m.tool_version = j.value("tool_version", std::string{});
    m.created = j.value("created", std::string{});
    m.updated = j.value("updated", std::string{});
    for (const auto& e : j.at("artifacts"))
      m.artifacts[e.at("path").get<std::string>()] = {e.at("path"), e.at("kind"), e.at("digest")};
    return m;
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Curves as CSV rows (label, x, y).
inline std::string curves_csv(const std::vector<Curve>& curves) {
  std::ostringstream out;
  out << "label,x,y\n";
  for (const auto& c : curves)
    for (const auto& [x, y] : c.points) out << c.label << ',' << detail::format_double(x) << ',' << detail::format_double(y) << '\n';
  return out.str();
}

inline std::vector<Curve> parse_curves_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "label,x,y") throw ConfigError("unexpected curve csv header", 1);
  std::vector<Curve> curves;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = detail::split_csv(line);
    if (c.size() != 3) throw ConfigError("expected 3 cells", lineno);
    if (curves.empty() || curves.back().label != c[0]) curves.push_back({c[0], {}});
    curves.back().points.emplace_back(detail::parse_double(c[1], lineno), detail::parse_double(c[2], lineno));
  }
  return curves;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class RunDirectory {
 public:
  /// Opens (or creates) `root/<experiment>-<config digest prefix>`. An
  /// existing directory must hold the same config.
  RunDirectory(const std::string& root, const ExperimentConfig& cfg) : cfg_(cfg) {
    const std::string text = emit_config(cfg);
    const std::string digest = sha256_hex(text);
    dir_ = std::filesystem::path(root) / (to_string(cfg.experiment) + "-" + digest.substr(0, 12));
    std::filesystem::create_directories(dir_);
    const auto mpath = dir_ / "manifest.json";
    if (std::filesystem::exists(mpath)) {
      manifest_ = RunManifest::from_json(nlohmann::json::parse(read_text(mpath.string())));
      if (manifest_.config_digest != digest) throw ConfigError("run directory " + dir_.string() + " holds a different config");
    } else {
      manifest_.config_digest = digest;
      manifest_.created = utc_timestamp();
    }
    write_artifact("config", "config", text);
  }

  const std::filesystem::path& path() const noexcept { return dir_; }
  const RunManifest& manifest() const noexcept { return manifest_; }
  std::string file(const std::string& rel) const { return (dir_ / rel).string(); }

  /// Listed in the manifest and unchanged on disk.
  bool valid(const std::string& rel) const {
    const auto it = manifest_.artifacts.find(rel);
    if (it == manifest_.artifacts.end()) return false;
    const auto p = dir_ / rel;
    return std::filesystem::exists(p) && file_sha256(p.string()) == it->second.digest;
  }

  bool all_valid(const std::vector<std::string>& rels) const {
    return std::all_of(rels.begin(), rels.end(), [&](const std::string& r) { return valid(r); });
  }

  void write_artifact(const std::string& rel, const std::string& kind, const std::string& text) {
    const auto p = dir_ / rel;
    std::filesystem::create_directories(p.parent_path());
    write_text(p.string(), text);
    record(rel, kind);
  }

  void write_binary(const std::string& rel, const std::string& kind, const std::vector<std::uint8_t>& bytes) {
    const auto p = dir_ / rel;
    std::filesystem::create_directories(p.parent_path());
    write_bytes(p.string(), bytes);
    record(rel, kind);
  }

  void save_manifest() {
    manifest_.updated = utc_timestamp();
    write_text((dir_ / "manifest.json").string(), manifest_.to_json().dump(2) + "\n");
  }

 private:
  void record(const std::string& rel, const std::string& kind) {
    manifest_.artifacts[rel] = {rel, kind, file_sha256((dir_ / rel).string())};
  }

  ExperimentConfig cfg_;
  std::filesystem::path dir_;
  RunManifest manifest_;
};

using Logger = std::function<void(const std::string&)>;

struct RunSummary {
  std::string directory;
  std::size_t stages_run = 0;
  std::size_t stages_skipped = 0;
};

namespace rundir_detail {

inline std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed) + "/"; }

inline std::string log_csv(const Trajectory& traj, const Model& model, const Dataset& test,
                           const std::vector<std::uint64_t>& iters, LossKind loss) {
  std::ostringstream out;
  out << "iteration,loss,accuracy\n";
  for (auto t : iters) {
    const auto& c = traj.at(t);
    out << t << ',' << detail::format_double(c.train_loss) << ','
        << detail::format_double(evaluate(model, c.params, test, loss).accuracy) << '\n';
  }
  return out.str();
}

inline std::string matrix_meta(const MetricMatrix& m) { return metric_metadata(m).dump(2) + "\n"; }

}  // namespace rundir_detail

/// Runs cfg.experiment for every replicate seed under `root`, skipping
/// stages whose artifacts are already present and intact.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& root, std::size_t threads = 1,
                                 const Logger& log = {}) {
  using namespace rundir_detail;
  cfg.validate();
  RunDirectory run(root, cfg);
  RunSummary summary{run.path().string(), 0, 0};
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const ExperimentData data = load_data(cfg);
  const auto grid_iters = merged({&cfg.t0s, &cfg.t1s, &cfg.taus, &cfg.switch_ts});

  for (std::uint64_t seed : cfg.seeds) {
    const std::string sd = seed_dir(seed);
    const Replicate rep = make_replicate(cfg, data, seed);
    std::vector<std::uint64_t> stored = grid_iters;
    stored.push_back(rep.optimizer.total_iterations);
    stored = sorted_unique(stored);

    std::optional<Trajectory> base;
    auto trajectory = [&]() -> const Trajectory& {
      if (!base) base = train_replicate(cfg, data, rep);
      return *base;
    };
    auto stage = [&](const std::string& name, const std::vector<std::string>& outputs, const std::function<void()>& body) {
      if (run.all_valid(outputs)) {
        ++summary.stages_skipped;
        say("seed " + std::to_string(seed) + ": " + name + " up to date");
        return;
      }
      say("seed " + std::to_string(seed) + ": " + name);
      body();
      ++summary.stages_run;
      run.save_manifest();
    };

    std::vector<std::string> train_outputs{sd + "log.csv"};
    for (auto t : stored) train_outputs.push_back(sd + "ckpt_" + std::to_string(t) + ".bin");
    stage("train", train_outputs, [&] {
      const Trajectory& tr = trajectory();
      for (auto t : stored) run.write_binary(sd + "ckpt_" + std::to_string(t) + ".bin", "checkpoint", encode_checkpoint(tr.at(t)));
      run.write_artifact(sd + "log.csv", "log", log_csv(tr, rep.model, data.test, stored, cfg.loss));
    });

    if (cfg.experiment == ExperimentKind::chaos) {
      std::vector<std::string> outs{sd + "inflection.json"};
      for (const char* k : {"C", "B", "D"})
        outs.insert(outs.end(), {sd + k + ".csv", sd + k + ".csv.meta.json", sd + k + ".svg"});
      stage("chaos", outs, [&] {
        const ChaosResult r = run_chaos(cfg, data, rep, trajectory(), threads);
        for (const auto* m : {&r.C, &r.B, &r.D}) {
          const std::string k(1, to_char(m->kind));
          run.write_artifact(sd + k + ".csv", "metric", metric_csv(*m));
          run.write_artifact(sd + k + ".csv.meta.json", "metadata", matrix_meta(*m));
          run.write_artifact(sd + k + ".svg", "plot", render_heatmap_svg(*m, k + " (t0 x t1), seed " + std::to_string(seed)));
        }
        const InflectionEstimate inf = detect_inflection(r.C, cfg.inflection_rule);
        nlohmann::json j{{"t_star", inf.t_star}, {"rule", inf.rule}, {"tie", inf.tie}, {"score", inf.score}};
        run.write_artifact(sd + "inflection.json", "inflection", j.dump(2) + "\n");
      });
    }
    if (cfg.experiment == ExperimentKind::cone || cfg.experiment == ExperimentKind::kernel_grid) {
      std::vector<std::string> outs{sd + "kernel_grid.csv", sd + "kernel_grid.csv.meta.json", sd + "kernel_grid.svg"};
      if (cfg.experiment == ExperimentKind::cone)
        outs.insert(outs.end(), {sd + "reference_sweep.csv", sd + "adjacent_sweep.csv", sd + "embedding.csv",
                                 sd + "embedding.csv.meta.json", sd + "reference_sweep.svg", sd + "adjacent_sweep.svg", sd + "embedding.svg"});
      stage(to_string(cfg.experiment), outs, [&] {
        const ConeResult r = run_cone(cfg, data, rep, trajectory(), threads);
        run.write_artifact(sd + "kernel_grid.csv", "metric", metric_csv(r.kernel_grid));
        run.write_artifact(sd + "kernel_grid.csv.meta.json", "metadata", matrix_meta(r.kernel_grid));
        run.write_artifact(sd + "kernel_grid.svg", "plot", render_heatmap_svg(r.kernel_grid, "S, seed " + std::to_string(seed)));
        if (cfg.experiment != ExperimentKind::cone) return;
        run.write_artifact(sd + "reference_sweep.csv", "curves", curves_csv(r.reference));
        run.write_artifact(sd + "adjacent_sweep.csv", "curves", curves_csv(r.adjacent));
        run.write_artifact(sd + "reference_sweep.svg", "plot",
                           render_curves_svg(r.reference, "S(theta_t, theta_tau)", "iteration t", "kernel distance"));
        run.write_artifact(sd + "adjacent_sweep.svg", "plot",
                           render_curves_svg(r.adjacent, "S(theta_t, theta_t+dt)", "iteration t", "kernel distance"));
        run.write_artifact(sd + "embedding.csv", "embedding", embedding_csv(r.embedding));
        nlohmann::json meta{{"stress", r.embedding.stress},
                            {"eigenvalues", r.embedding.eigenvalues},
                            {"clamped", r.embedding.clamped}};
        run.write_artifact(sd + "embedding.csv.meta.json", "metadata", meta.dump(2) + "\n");
        run.write_artifact(sd + "embedding.svg", "plot", render_embedding_svg(r.embedding, "eNTK trajectory (MDS)"));
      });
    }
    if (cfg.experiment == ExperimentKind::switch_sweep) {
      stage("switch", {sd + "switch_sweep.csv", sd + "switch_sweep.svg"}, [&] {
        const auto rows = run_switch(cfg, data, rep, trajectory(), threads);
        run.write_artifact(sd + "switch_sweep.csv", "switch", switch_sweep_csv(rows));
        Curve c{"seed " + std::to_string(seed), {}};
        for (const auto& r : rows) c.points.emplace_back(static_cast<double>(r.t), r.test_accuracy);
        run.write_artifact(sd + "switch_sweep.svg", "plot", render_curves_svg({c}, "test accuracy vs switch t", "switch t", "accuracy"));
      });
    }
  }
  run.save_manifest();
  return summary;
}

}  // namespace iscope
