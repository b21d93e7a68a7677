// Command-line front end: run, repeat, aggregate, report.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "llmx/harness.hpp"
#include "llmx/metrics.hpp"
#include "llmx/trace.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void print_summary(const llmx::RunSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("-"); };
  std::cout << s.name << " seed=" << s.seed << " policy=" << s.policy << " contractors=" << s.contractors
            << "\n  cfps=" << s.cfps << " offers=" << s.offers << " confirms=" << s.confirms
            << " accepts=" << s.accepts << " rejects=" << s.rejects << "\n  rounds=" << s.rounds
            << " effective=" << s.rounds_effective << " empty=" << s.rounds_empty
            << " completeness=" << s.completeness << " late_offers=" << s.late_offers
            << "\n  latency_ms mean=" << opt(s.mean_ms) << " p50=" << opt(s.p50_ms) << " p95=" << opt(s.p95_ms)
            << " drift_ms_per_hour=" << opt(s.drift_slope_ms_per_hour) << "\n  wall_time_s=" << s.wall_time_s
            << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : llmx::detail::split(text, ',')) seeds.push_back(llmx::detail::parse_uint("--seeds", item));
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"llmx: negotiation exchange scenario runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<double> compress;
  bool real_clock = false;
  auto* run = app.add_subcommand("run", "Run one scenario and write trace + aggregates");
  run->add_option("config", config_path, "Scenario config file")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out_dir, "Output directory (default runs/<name>)");
  run->add_option("--compress", compress, "Time compression factor (> 0)");
  run->add_flag("--real-clock", real_clock, "Run against the wall clock");

  std::string seeds_text;
  auto* repeat = app.add_subcommand("repeat", "Rerun a scenario under several seeds and report spread");
  repeat->add_option("config", config_path, "Scenario config file")->required();
  repeat->add_option("--seeds", seeds_text, "Comma-separated seeds (at least two)")->required();
  repeat->add_option("--out", out_dir, "Write one run directory per seed under this directory");

  std::string trace_path;
  auto* agg = app.add_subcommand("aggregate", "Recompute aggregate files from a trace");
  agg->add_option("trace", trace_path, "trace.jsonl")->required();
  agg->add_option("--out", out_dir, "Output directory (default: next to the trace)");

  std::vector<std::string> run_dirs;
  auto* report = app.add_subcommand("report", "Print a comparison table for one or more run directories");
  report->add_option("run-dir", run_dirs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      llmx::ScenarioConfig cfg = llmx::load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (compress) {
        if (!(*compress > 0)) throw llmx::ConfigError("--compress", "must be > 0");
        cfg.time_compression = *compress;
      }
      if (real_clock) cfg.clock = llmx::ClockKind::real;
      const fs::path out = out_dir.empty() ? fs::path("runs") / cfg.name : fs::path(out_dir);
      const auto result = llmx::run_scenario(cfg, out);
      print_summary(result.summary);
      std::cout << "  output=" << out.string() << '\n';
    } else if (*repeat) {
      const llmx::ScenarioConfig cfg = llmx::load_config(config_path);
      std::optional<fs::path> root;
      if (!out_dir.empty()) root = fs::path(out_dir);
      const auto rep = llmx::repeat_runs(cfg, parse_seeds(seeds_text), root);
      for (const auto& s : rep.runs) print_summary(s);
      std::cout << "max relative deviation:\n";
      for (const auto& [metric, dev] : rep.max_relative_deviation) std::cout << "  " << metric << " " << dev << '\n';
    } else if (*agg) {
      const auto events = llmx::read_trace_file(trace_path);
      const auto a = llmx::aggregate(events);
      const fs::path out = out_dir.empty() ? fs::path(trace_path).parent_path() : fs::path(out_dir);
      llmx::write_aggregates(a, out.empty() ? fs::path(".") : out);
      std::cout << llmx::summary_json(a).dump(2) << '\n';
    } else if (*report) {
      std::vector<llmx::ReportColumn> cols;
      for (const auto& d : run_dirs) cols.push_back(llmx::load_report_column(d));
      std::cout << llmx::format_report(cols);
    }
  } catch (const llmx::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
