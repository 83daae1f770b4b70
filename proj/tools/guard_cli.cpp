// Command-line front end for the experiment harness.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 draw budget
// exhausted, 4 guarantee audit failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "guard/harness/experiments.hpp"

namespace fs = std::filesystem;
using namespace guard;
using namespace guard::harness;

namespace {

struct Options {
  std::string config;
  bool timings = false;
};

class Timer {
 public:
  Timer(const Options& o, std::string label) : on_(o.timings), label_(std::move(label)) {}
  ~Timer() {
    if (!on_) return;
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    std::cerr << "[timing] " << label_ << ": " << ms << " ms\n";
  }

 private:
  bool on_;
  std::string label_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << content;
  std::cout << path.string() << '\n';
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void cmd_validate(const Options& o) {
  const auto cfg = load_config(o.config);
  std::cout << serialize_config(cfg);
}

void cmd_enumerate(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "enumerate");
  const Scenario s = build_scenario(cfg);
  const fs::path dir = cfg.output_dir();
  std::ostringstream base, gold;
  write_table_csv(base, s.fm->base_table(), s.vocab);
  write_table_csv(gold, s.fm->gold(), s.vocab);
  write_file(dir / "base_table.csv", base.str());
  write_file(dir / "gold_table.csv", gold.str());
  write_file(dir / "enumerate.json", dump(enumerate_json(cfg, s)));
}

void cmd_train(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "train");
  const Scenario s = build_scenario(cfg);
  const auto runs = train_all(cfg, s, o.timings);
  const fs::path dir = cfg.output_dir();
  for (const auto& r : runs) {
    if (!r.result.model) continue;
    std::ostringstream m;
    write_model(m, *r.result.model);
    write_file(dir / ("model-" + r.method + "-seed" + std::to_string(r.seed_index) + ".txt"), m.str());
  }
  write_file(dir / "learning_curve.csv", learning_curve_csv(runs, o.timings));
}

void cmd_learning_curve(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "learning-curve");
  const Scenario s = build_scenario(cfg);
  const auto runs = train_all(cfg, s, o.timings);
  for (const auto& r : runs)
    if (r.diverged)
      std::cerr << "warning: " << r.method << " seed " << r.seed_index << " diverged\n";
  write_file(cfg.output_dir() / "learning_curve.csv", learning_curve_csv(runs, o.timings));
}

void cmd_sample(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "sample");
  const Scenario s = build_scenario(cfg);
  const ModelPtr proposal = build_proposal(cfg, s, cfg.sampler.proposal);
  Rng rng(split_seed(cfg.run.seed, 1000));
  const SampleRun run = run_sampling(cfg, s, *proposal, rng);
  const fs::path dir = cfg.output_dir();
  write_file(dir / "samples.txt", samples_text(s, run.samples));
  write_file(dir / "sample_report.json", dump(sample_summary(cfg, s, run)));
}

void cmd_theorem2(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "report-theorem2");
  const Scenario s = build_scenario(cfg);
  const ModelPtr proposal = build_proposal(cfg, s, cfg.sampler.proposal);
  Rng rng(split_seed(cfg.run.seed, 2000));
  write_file(cfg.output_dir() / "theorem2.json", dump(theorem2_json(cfg, s, *proposal, rng)));
}

void cmd_tradeoff(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "tradeoff");
  const Scenario s = build_scenario(cfg);
  const auto runs = train_all(cfg, s);
  const ModelPtr proposal = build_proposal(cfg, s, cfg.sampler.proposal);
  const auto sweep = qrs_imh_sweep(cfg, s, *proposal);
  write_file(cfg.output_dir() / "tradeoff.csv", tradeoff_csv(tradeoff_points(cfg, s, runs, sweep)));
}

void cmd_heuristics(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "heuristics");
  const Scenario s = build_scenario(cfg);
  if (cfg.constraint.kind != "contains" && cfg.constraint.kind != "avoids")
    throw ConfigError(0, "constraint.kind: heuristics need a contains or avoids constraint");
  const auto runs = train_all(cfg, s);
  write_file(cfg.output_dir() / "heuristics.json", dump(heuristic_comparison(cfg, s, runs)));
}

void cmd_sweep(const Options& o) {
  const auto cfg = load_config(o.config);
  const Timer t(o, "sweep-qrs-imh");
  const Scenario s = build_scenario(cfg);
  const ModelPtr proposal = build_proposal(cfg, s, cfg.sampler.proposal);
  const auto pts = qrs_imh_sweep(cfg, s, *proposal);
  write_file(cfg.output_dir() / "qrs_imh.csv", sweep_csv(pts));
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kDrawBudgetExhausted:
      return 3;
    case ErrorKind::kConstraintViolatingDistribution:
      return 4;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guaranteed-generation experiment harness"};
  app.require_subcommand(1);
  Options opt;
  app.add_flag("--timings", opt.timings, "report wall-clock timings (adds wall_ms to curves)");

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const Options&);
  };
  const Command commands[] = {
      {"validate-config", "check a config and print its canonical form", cmd_validate},
      {"enumerate", "write exact base and gold tables", cmd_enumerate},
      {"train", "train the configured methods and save the models", cmd_train},
      {"sample", "draw samples with the configured sampler", cmd_sample},
      {"report-theorem2", "exact KL decomposition for the configured proposal", cmd_theorem2},
      {"learning-curve", "exact KL/AR learning curves for all methods", cmd_learning_curve},
      {"tradeoff", "-log AR vs KL points for all methods and samplers", cmd_tradeoff},
      {"heuristics", "compare heuristic samplers against trained proposals", cmd_heuristics},
      {"sweep-qrs-imh", "exact QRS beta and IMH step sweeps", cmd_sweep},
  };
  void (*selected)(const Options&) = nullptr;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("config", opt.config, "experiment config file")->required();
    sub->add_flag("--timings", opt.timings, "report wall-clock timings");
    sub->callback([&selected, run = c.run] { selected = run; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    selected(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
