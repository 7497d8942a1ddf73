#include <gtest/gtest.h>

#include <random>

#include "ticketing/benchkit.hpp"
#include "ticketing/engine.hpp"

using namespace ticketing;
using namespace ticketing::bench;

namespace {

LoadPlan published_plan() {
  LoadPlan p;  // defaults are the published staged-ramp parameters
  return p;
}

Sample sample(std::string label, double start, double rt, bool ok = true, std::uint64_t in = 0,
              std::uint64_t out = 0) {
  return Sample{std::move(label), start, rt, ok, in, out};
}

}  // namespace

TEST(LoadPlan, DefaultsMatchPublishedRamp) {
  const auto p = published_plan();
  EXPECT_EQ(p.target_threads, 100);
  EXPECT_EQ(p.startup_delay_s, 5);
  EXPECT_EQ(p.initial_threads, 10);
  EXPECT_EQ(p.step_threads, 10);
  EXPECT_EQ(p.step_interval_s, 30);
  EXPECT_EQ(p.step_window_s, 5);
  EXPECT_EQ(p.hold_s, 60);
  EXPECT_EQ(p.rampdown_per_s, 5);
}

TEST(LoadPlan, Validation) {
  EXPECT_THROW(LoadPlan::from_json({{"step_window_s", 40}}), std::invalid_argument);
  EXPECT_THROW(LoadPlan::from_json({{"initial_threads", 0}}), std::invalid_argument);
  EXPECT_THROW(LoadPlan::from_json({{"mix", {{"query", 0}}}}), std::invalid_argument);
  EXPECT_THROW(LoadPlan::from_json({{"mix", {{"checkout", 1}}}}), std::invalid_argument);
  EXPECT_THROW(LoadPlan::from_json({{"mix", {{"purchase", 1}}}}), std::invalid_argument);
  EXPECT_THROW(LoadPlan::from_json({{"hold_s", "long"}}), std::invalid_argument);
  auto p = LoadPlan::from_json({{"target_threads", 20}, {"initial_threads", 5}, {"hold_s", 2}});
  EXPECT_EQ(p.target_threads, 20);
  EXPECT_EQ(p.hold_s, 2);
}

TEST(RampSchedule, PublishedPlanTimeline) {
  const auto s = ramp_schedule(published_plan());
  ASSERT_EQ(s.size(), 100u);
  EXPECT_EQ(active_threads(s, 4.999), 0);
  EXPECT_EQ(active_threads(s, 5), 10);
  EXPECT_EQ(active_threads(s, 34.9), 10);
  EXPECT_EQ(active_threads(s, 35), 11);
  EXPECT_EQ(active_threads(s, 39.5), 20);
  EXPECT_EQ(active_threads(s, 65), 21);
  EXPECT_EQ(active_threads(s, 275), 91);
  EXPECT_EQ(active_threads(s, 279.4), 99);
  EXPECT_EQ(active_threads(s, 279.5), 100);
  EXPECT_EQ(active_threads(s, 339.999), 100);
  EXPECT_EQ(active_threads(s, 340), 95);
  EXPECT_EQ(active_threads(s, 341), 90);
  EXPECT_EQ(active_threads(s, 358.5), 5);
  EXPECT_EQ(active_threads(s, 359), 0);
  // The latest-started threads stop first.
  EXPECT_EQ(s.back().stop_s, 340);
  EXPECT_EQ(s.front().stop_s, 359);
}

TEST(RampSchedule, StepSpacingAndPartialFinalStep) {
  LoadPlan p;
  p.target_threads = 25;
  p.initial_threads = 10;
  p.step_threads = 10;
  const auto s = ramp_schedule(p);
  ASSERT_EQ(s.size(), 25u);
  EXPECT_DOUBLE_EQ(s[10].start_s, 35);
  EXPECT_DOUBLE_EQ(s[11].start_s, 35.5);
  // Final step of five spreads over the whole window.
  EXPECT_DOUBLE_EQ(s[20].start_s, 65);
  EXPECT_DOUBLE_EQ(s[21].start_s, 66);
  EXPECT_DOUBLE_EQ(s[24].start_s, 69);
  EXPECT_DOUBLE_EQ(s[24].stop_s, 130);
}

TEST(Percentile, NearestRank) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(nearest_rank_percentile(v, 50), 50);
  EXPECT_EQ(nearest_rank_percentile(v, 90), 90);
  EXPECT_EQ(nearest_rank_percentile(v, 99), 99);
  EXPECT_EQ(nearest_rank_percentile(v, 0), 1);
  EXPECT_EQ(nearest_rank_percentile(v, 100), 100);
  EXPECT_THROW(nearest_rank_percentile({}, 50), EmptySampleSetError);
}

TEST(Percentile, AgreesWithCountingDefinition) {
  // Smallest value x such that at least p% of the set is <= x.
  std::mt19937 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng() % 200);
    for (auto& x : v) x = rng() % 50;
    const double p = std::uniform_real_distribution<double>(0.1, 100)(rng);
    double want = 1e18;
    for (double x : v) {
      const auto le = std::count_if(v.begin(), v.end(), [&](double y) { return y <= x; });
      if (100.0 * static_cast<double>(le) >= p * static_cast<double>(v.size()) - 1e-9) want = std::min(want, x);
    }
    ASSERT_EQ(nearest_rank_percentile(v, p), want) << "p=" << p << " n=" << v.size();
  }
}

TEST(Summarize, SingleSample) {
  auto r = summarize({sample("query", 0, 10)});
  ASSERT_EQ(r.rows.size(), 2u);
  const auto& row = *r.row("query");
  for (double x : {row.average_ms, row.median_ms, row.p90_ms, row.p99_ms, row.min_ms, row.max_ms}) {
    EXPECT_EQ(x, 10);
  }
  EXPECT_EQ(r.total().label, "TOTAL");
  EXPECT_THROW(summarize({}), EmptySampleSetError);
}

TEST(Summarize, RowsAndRates) {
  std::vector<Sample> s;
  for (int i = 1; i <= 100; ++i) s.push_back(sample("query", (i - 1) * 10.0, i, i % 10 != 0, 2048, 1024));
  s.push_back(sample("purchase", 0, 40, false));
  auto r = summarize(s);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].label, "purchase");
  const auto& q = *r.row("query");
  EXPECT_EQ(q.samples, 100u);
  EXPECT_DOUBLE_EQ(q.average_ms, 50.5);
  EXPECT_EQ(q.median_ms, 50);
  EXPECT_EQ(q.p90_ms, 90);
  EXPECT_EQ(q.p99_ms, 99);
  EXPECT_DOUBLE_EQ(q.error_rate_pct, 10);
  // Active span: first start 0 to last end 990 + 100 ms.
  EXPECT_NEAR(q.throughput_per_s, 100 / 1.09, 1e-9);
  EXPECT_NEAR(q.receive_kb_s, 200 / 1.09, 1e-9);
  EXPECT_NEAR(q.send_kb_s, 100 / 1.09, 1e-9);
  EXPECT_EQ(r.total().samples, 101u);
  EXPECT_NEAR(r.total().error_rate_pct, 100.0 * 11 / 101, 1e-9);
}

TEST(ReportCsv, ColumnsAndByteStability) {
  std::vector<Sample> s{sample("query", 0, 12.5, true, 1000, 200), sample("query", 5, 7.25, false, 900, 200)};
  const auto a = report_csv(summarize(s));
  const auto b = report_csv(summarize(s));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(0, a.find('\n')),
            "Label,Samples,Average,Median,90th,99th,Min,Max,Anomaly Rate,Throughput,Receive KB/s,"
            "Send KB/s");
  EXPECT_NE(a.find("\nquery,2,9.875,7.250,12.500,12.500,7.250,12.500,50.00%,"), std::string::npos) << a;
  EXPECT_NE(a.find("\nTOTAL,2,"), std::string::npos);
}

TEST(RunPlan, UnreachableEngineIsInvalid) {
  LoadPlan p;
  p.base_url = "http://127.0.0.1:1";
  p.target_threads = p.initial_threads = 1;
  p.hold_s = 0.1;
  auto r = run_plan(p);
  EXPECT_FALSE(r.valid);
  EXPECT_TRUE(r.samples.empty());
}

TEST(RunPlan, ShortLocalRun) {
  auto cfg = engine::EngineConfig::defaults();
  cfg.trains.push_back({"G1", {"2026-11-01"}, {"A", "B"}, {{1, schema::SeatType::kSecond, 50}}});
  engine::Engine eng(cfg);
  eng.start_background();
  engine::HttpServer server(eng);
  const int port = server.start("127.0.0.1", 0, 8);

  LoadPlan p;
  p.base_url = "http://127.0.0.1:" + std::to_string(port);
  p.target_threads = 4;
  p.initial_threads = 2;
  p.step_threads = 2;
  p.startup_delay_s = 0;
  p.step_interval_s = 0.2;
  p.step_window_s = 0.1;
  p.hold_s = 0.5;
  p.rampdown_per_s = 4;
  p.think_time_ms = 5;
  p.mix = {{"query", 1}, {"purchase", 0}};
  p.query = {"2026-11-01", "A", "B"};
  p.purchase = {"G1", {"2026-11-01"}, "A", "B", "second"};
  auto r = run_plan(p);
  server.stop();
  eng.stop_background();

  ASSERT_TRUE(r.valid) << r.invalid_reason;
  ASSERT_FALSE(r.samples.empty());
  auto report = summarize(r.samples);
  EXPECT_EQ(report.row("purchase"), nullptr);
  EXPECT_EQ(report.row("query")->error_rate_pct, 0);
  EXPECT_GT(report.row("query")->receive_kb_s, 0);
}
