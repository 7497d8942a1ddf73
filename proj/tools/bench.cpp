#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ticketing/benchkit.hpp"

using namespace ticketing::bench;

int main(int argc, char** argv) {
  CLI::App app{"bench: staged-ramp load generator"};
  app.require_subcommand(1);

  std::string plan_path, out_path;
  auto* run = app.add_subcommand("run", "run a load plan and write the CSV report");
  run->add_option("--plan", plan_path, "plan JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_path, "report CSV path")->required();

  auto* schedule = app.add_subcommand("schedule", "print the thread timeline without running");
  std::string schedule_plan;
  double step = 1.0;
  schedule->add_option("--plan", schedule_plan, "plan JSON")->required()->check(CLI::ExistingFile);
  schedule->add_option("--step", step, "sampling step in seconds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*schedule) {
      const auto windows = ramp_schedule(LoadPlan::load(schedule_plan));
      double end = 0;
      for (const auto& w : windows) end = std::max(end, w.stop_s);
      std::cout << "t_s,threads\n";
      for (double t = 0; t <= end + step / 2; t += step) {
        std::cout << t << "," << active_threads(windows, t) << "\n";
      }
      return 0;
    }

    const auto plan = LoadPlan::load(plan_path);
    const auto result = run_plan(plan);
    if (!result.valid) std::cerr << "bench: run invalid: " << result.invalid_reason << "\n";
    if (result.samples.empty()) {
      std::cerr << "bench: no samples recorded\n";
      return 2;
    }
    const auto report = summarize(result.samples);
    std::ofstream out(out_path);
    out << report_csv(report);
    if (!result.valid) out << "# INVALID: " << result.invalid_reason << "\n";
    std::cout << report_csv(report);
    if (!result.valid) return 2;
    if (report.total().error_rate_pct > plan.error_ceiling_pct) {
      std::cerr << "bench: error rate " << report.total().error_rate_pct << "% exceeds ceiling "
                << plan.error_ceiling_pct << "%\n";
      return 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
