#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "iscope/config.hpp"
#include "iscope/inspect.hpp"
#include "iscope/render.hpp"
#include "iscope/rundir.hpp"

namespace {

using namespace iscope;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitMissing = 4;

struct Globals {
  std::string config;
  std::string out = "runs";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

ExperimentConfig load_config(const Globals& g, ExperimentKind kind) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : parse_config(g.config);
  cfg.experiment = kind;
  if (g.seed) cfg.seeds = {*g.seed};
  cfg.validate();
  return cfg;
}

int run(const Globals& g, ExperimentKind kind) {
  const ExperimentConfig cfg = load_config(g, kind);
  const RunSummary s = run_experiment(cfg, g.out, g.threads, [](const std::string& line) { std::cerr << line << '\n'; });
  std::cerr << s.stages_run << " stage(s) run, " << s.stages_skipped << " up to date\n";
  std::cout << s.directory << '\n';
  return kExitOk;
}

std::string default_svg_path(const std::string& in) {
  std::filesystem::path p(in);
  p.replace_extension(".svg");
  return p.string();
}

int render(const std::string& in, std::string out, const std::string& title) {
  const std::string text = read_text(in);
  if (out.empty()) out = default_svg_path(in);
  const std::string header = text.substr(0, text.find('\n'));
  if (header == "label,x,y") {
    render_curves(parse_curves_csv(text), out, title);
  } else if (header.rfind("t,T,test_loss,test_acc,seed", 0) == 0) {
    Curve c{"test accuracy", {}};
    for (const auto& r : parse_switch_sweep_csv(text)) c.points.emplace_back(static_cast<double>(r.t), r.test_accuracy);
    render_curves({c}, out, title, "switch t", "accuracy");
  } else {
    render_heatmap(parse_metric_csv(text), out, title);
  }
  std::cout << out << '\n';
  return kExitOk;
}

int inspect(const std::string& in, const std::string& encode_to) {
  if (!encode_to.empty()) {
    write_bytes(encode_to, parse_inspect_text(read_text(in)));
    return kExitOk;
  }
  std::cout << inspect_text(read_bytes(in));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-dynamics experiments: chaos grids, eNTK cones and linearized switching."};
  app.footer("Configuration keys (key = value, one per line):\n\n" + config_reference());
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "experiment config file (defaults apply when omitted)");
  app.add_option("--out", g.out, "root directory for run directories")->capture_default_str();
  app.add_option("--seed", g.seed, "run a single replicate seed instead of the configured list");
  app.add_option("--threads", g.threads, "parallelism hint; outputs do not depend on it")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  int code = kExitOk;
  auto experiment = [&](const char* name, ExperimentKind kind, const char* help) {
    app.add_subcommand(name, help)->callback([&, kind] { code = run(g, kind); });
  };
  experiment("train", ExperimentKind::train, "train each replicate and store checkpoints");
  experiment("chaos", ExperimentKind::chaos, "perturbation grid: C, B and D heatmaps and the inflection estimate");
  experiment("cone", ExperimentKind::cone, "kernel sweeps against references and adjacent iterates, plus embedding");
  experiment("switch", ExperimentKind::switch_sweep, "switch to linearized training at each grid point");
  experiment("kernel-grid", ExperimentKind::kernel_grid, "all-pairs kernel distance over stored checkpoints");

  std::string render_in, render_out, render_title;
  auto* r = app.add_subcommand("render", "render a metric, curve or switch-sweep CSV as SVG");
  r->add_option("input", render_in, "CSV artifact")->required();
  r->add_option("-o,--output", render_out, "output path (default: input with .svg)");
  r->add_option("--title", render_title, "plot title");
  r->callback([&] { code = render(render_in, render_out, render_title); });

  std::string inspect_in, inspect_encode;
  auto* i = app.add_subcommand("inspect", "print a checkpoint or kernel file as text");
  i->add_option("input", inspect_in, "binary artifact, or text with --encode")->required();
  i->add_option("--encode", inspect_encode, "parse text produced by inspect and write the binary here");
  i->callback([&] { code = inspect(inspect_in, inspect_encode); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kExitMissing;
  } catch (const ParseError& e) {
    std::cerr << "corrupt artifact: " << e.what() << '\n';
    return kExitMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return code;
}
