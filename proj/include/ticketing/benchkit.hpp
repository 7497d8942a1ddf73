#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ticketing::bench {

struct QueryTarget {
  std::string date;
  std::string departure;
  std::string arrival;
};

struct PurchaseTarget {
  std::string train_id;
  std::vector<std::string> dates;  // cycled through, one per request
  std::string departure;
  std::string arrival;
  std::string seat_type = "second";
};

struct LoadPlan {
  int target_threads = 100;
  double startup_delay_s = 5;
  int initial_threads = 10;
  int step_threads = 10;
  double step_interval_s = 30;
  double step_window_s = 5;
  double hold_s = 60;
  int rampdown_per_s = 5;
  double think_time_ms = 0;
  std::map<std::string, double> mix{{"query", 1.0}};  // label -> weight
  std::string base_url = "http://127.0.0.1:8080";
  double error_ceiling_pct = 100.0;
  QueryTarget query;
  PurchaseTarget purchase;

  void validate() const;
  static LoadPlan from_json(const nlohmann::json& doc);
  static LoadPlan load(const std::filesystem::path& path);
};

// One virtual user's lifetime, in seconds from the start of the run.
struct ThreadWindow {
  int index = 0;
  double start_s = 0;
  double stop_s = 0;
};

// Initial threads start together after the startup delay. Step k (k >= 1)
// begins at delay + k * step_interval and spreads its threads evenly over
// step_window. The hold starts when the last step window closes. Ramp-down
// stops rampdown_per_s threads per second, latest-started first, the first
// batch at the end of the hold.
std::vector<ThreadWindow> ramp_schedule(const LoadPlan& plan);
int active_threads(const std::vector<ThreadWindow>& schedule, double t_s);

struct Sample {
  std::string label;
  double start_ms = 0;  // from run start
  double rt_ms = 0;
  bool ok = false;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
};

struct RunResult {
  std::vector<Sample> samples;
  bool valid = true;
  std::string invalid_reason;
  double wall_s = 0;
};

// Runs the plan against base_url in real time.
RunResult run_plan(const LoadPlan& plan);

struct ReportRow {
  std::string label;
  std::uint64_t samples = 0;
  double average_ms = 0;
  double median_ms = 0;
  double p90_ms = 0;
  double p99_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
  double error_rate_pct = 0;
  double throughput_per_s = 0;
  double receive_kb_s = 0;
  double send_kb_s = 0;
};

struct RunReport {
  std::vector<ReportRow> rows;  // one per label in name order, then TOTAL
  const ReportRow& total() const { return rows.back(); }
  const ReportRow* row(const std::string& label) const;
};

// Smallest sample whose rank is at least ceil(p/100 * N). Throws on empty.
double nearest_rank_percentile(std::vector<double> values, double p);

class EmptySampleSetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

RunReport summarize(const std::vector<Sample>& samples);

// Header: Label,Samples,Average,Median,90th,99th,Min,Max,Anomaly Rate,
// Throughput,Receive KB/s,Send KB/s
std::string report_csv(const RunReport& report);

}  // namespace ticketing::bench
