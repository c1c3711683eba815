// tripends: command-line front end for the trip-end pipeline.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "tripends/csv.hpp"
#include "tripends/error.hpp"
#include "tripends/pipeline.hpp"
#include "tripends/synth.hpp"

namespace fs = std::filesystem;
using namespace tripends;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

PipelineConfig pipeline_config(const Globals& g) {
  if (g.config.empty()) throw InputError("--config is required");
  PipelineConfig c = PipelineConfig::load(g.config);
  if (!g.out.empty()) c.output = g.out;
  if (g.threads) c.threads = *g.threads;
  c.validate();
  return c;
}

int run_stages(const Globals& g, Stage until) {
  const PipelineConfig c = pipeline_config(g);
  RunOptions opt;
  opt.until = until;
  opt.log = [](const std::string& msg) { fmt::print(stderr, "{}\n", msg); };
  const auto result = run_pipeline(c, opt);
  if (result.summary.contains("validation")) {
    const auto& v = result.summary["validation"];
    fmt::print("precision {:.4f} recall {:.4f} accuracy {:.4f}\n", v["precision"].get<double>(),
               v["recall"].get<double>(), v["accuracy"].get<double>());
  }
  fmt::print("outputs in {}\n", c.output.string());
  return 0;
}

int run_synth(const Globals& g) {
  SynthScenario s;
  if (!g.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(csv::read_file(g.config));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(g.config + ": " + e.what());
    }
    s = SynthScenario::from_json(j);
  }
  if (g.seed) s.seed = *g.seed;
  const fs::path dir = g.out.empty() ? fs::path("synth") : fs::path(g.out);
  const auto out = generate_scenario(s);
  write_scenario(out, s, dir);
  fmt::print("{} trucks, {} truth events written to {}\n", out.trajectories.size(), out.truth.events.size(),
             dir.string());
  return 0;
}

int run_score(const std::string& ends_path, const std::string& truth_path, const MatchOptions& m) {
  const auto ends = load_ends_geojson(ends_path);
  const auto truth = load_truth_csv(truth_path);
  const Score s = score_against_truth(ends, truth, m);
  fmt::print("NA {} NM {} NE {}\nprecision {:.4f}\nrecall {:.4f}\naccuracy {:.4f}\n", s.na, s.nm, s.ne, s.precision,
             s.recall, accuracy(s.na, s.nm, s.ne));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trip-end identification for heavy-truck GPS trajectories"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Pipeline config (or scenario config for synth)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Random seed (synth)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  struct Sub {
    const char* name;
    const char* help;
    Stage until;
  };
  const Sub subs[] = {
      {"ingest", "Parse, clean and clip GPS records", Stage::ingest},
      {"stops", "Detect stops with a data-driven speed threshold", Stage::stops},
      {"thresholds", "Derive the dwell-time threshold ladder", Stage::thresholds},
      {"calibrate", "Calibrate the shortest-path order for circuity", Stage::calibrate},
      {"identify", "Identify trip ends", Stage::identify},
      {"filter", "Remove on-road and POI-less trip ends", Stage::filter},
      {"trips", "Extract trips between kept ends", Stage::trips},
      {"chains", "Build travel networks and trip chains", Stage::chains},
      {"grid", "Hotspot grid of kept ends", Stage::aggregates},
      {"odmatrix", "Zone-to-zone trip matrix", Stage::aggregates},
      {"run", "Full pipeline", Stage::aggregates},
  };
  std::optional<Stage> chosen;
  for (const auto& s : subs) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    cmd->fallthrough();
    cmd->callback([&chosen, until = s.until] { chosen = until; });
  }

  bool synth = false;
  app.add_subcommand("synth", "Generate a synthetic scenario with ground truth")->fallthrough()->callback([&] {
    synth = true;
  });

  std::string ends_path, truth_path;
  MatchOptions match;
  bool score = false;
  auto* sc = app.add_subcommand("score", "Score trip ends against ground truth");
  sc->fallthrough();
  sc->add_option("--ends", ends_path, "ends.geojson")->required();
  sc->add_option("--truth", truth_path, "truth.csv")->required();
  sc->add_option("--radius", match.radius_m, "Match radius, meters");
  sc->add_option("--window", match.window_s, "Match window, seconds");
  sc->callback([&] { score = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth) return run_synth(g);
    if (score) return run_score(ends_path, truth_path, match);
    if (chosen) return run_stages(g, *chosen);
    return 1;
  } catch (const StageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return e.input() ? 1 : 2;
  } catch (const InputError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
}
