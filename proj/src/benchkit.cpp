#include "ticketing/benchkit.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

namespace ticketing::bench {

using nlohmann::json;

void LoadPlan::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("load plan: " + m); };
  if (target_threads < 1 || initial_threads < 1 || step_threads < 1 || rampdown_per_s < 1) {
    fail("thread counts must be positive");
  }
  if (initial_threads > target_threads) fail("initial_threads exceeds target_threads");
  if (startup_delay_s < 0 || think_time_ms < 0) fail("delays must not be negative");
  if (step_interval_s <= 0 || step_window_s <= 0 || hold_s <= 0) {
    fail("step_interval_s, step_window_s and hold_s must be positive");
  }
  if (step_window_s > step_interval_s) fail("step_window_s must not exceed step_interval_s");
  double total = 0;
  for (const auto& [label, w] : mix) {
    if (label != "query" && label != "purchase") fail("unknown request label '" + label + "'");
    if (w < 0) fail("mix weights must not be negative");
    total += w;
  }
  if (total <= 0) fail("mix needs a positive weight");
  if (mix.contains("purchase") && mix.at("purchase") > 0 && purchase.dates.empty()) {
    fail("purchase.dates is required when purchases are in the mix");
  }
}

LoadPlan LoadPlan::from_json(const json& doc) {
  LoadPlan p;
  auto get = [&](const char* key, auto& out) {
    if (doc.contains(key)) out = doc.at(key).get<std::decay_t<decltype(out)>>();
  };
  try {
    get("target_threads", p.target_threads);
    get("startup_delay_s", p.startup_delay_s);
    get("initial_threads", p.initial_threads);
    get("step_threads", p.step_threads);
    get("step_interval_s", p.step_interval_s);
    get("step_window_s", p.step_window_s);
    get("hold_s", p.hold_s);
    get("rampdown_per_s", p.rampdown_per_s);
    get("think_time_ms", p.think_time_ms);
    get("mix", p.mix);
    get("base_url", p.base_url);
    get("error_ceiling_pct", p.error_ceiling_pct);
    if (doc.contains("query")) {
      const auto& q = doc.at("query");
      p.query = {q.at("date"), q.at("departure"), q.at("arrival")};
    }
    if (doc.contains("purchase")) {
      const auto& q = doc.at("purchase");
      p.purchase.train_id = q.at("train_id");
      p.purchase.dates = q.at("dates").get<std::vector<std::string>>();
      p.purchase.departure = q.at("departure");
      p.purchase.arrival = q.at("arrival");
      if (q.contains("seat_type")) p.purchase.seat_type = q.at("seat_type");
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("load plan: ") + e.what());
  }
  p.validate();
  return p;
}

LoadPlan LoadPlan::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open plan " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("plan " + path.string() + ": " + e.what());
  }
}

std::vector<ThreadWindow> ramp_schedule(const LoadPlan& plan) {
  plan.validate();
  std::vector<ThreadWindow> out;
  for (int i = 0; i < plan.initial_threads; ++i) out.push_back({i, plan.startup_delay_s, 0});

  double last_window_end = plan.startup_delay_s;
  for (int k = 1; static_cast<int>(out.size()) < plan.target_threads; ++k) {
    const int n = std::min(plan.step_threads, plan.target_threads - static_cast<int>(out.size()));
    const double step_start = plan.startup_delay_s + k * plan.step_interval_s;
    for (int j = 0; j < n; ++j) {
      out.push_back({static_cast<int>(out.size()), step_start + j * plan.step_window_s / n, 0});
    }
    last_window_end = step_start + plan.step_window_s;
  }

  const double hold_end = last_window_end + plan.hold_s;
  for (int rank = 0; rank < static_cast<int>(out.size()); ++rank) {
    auto& w = out[out.size() - 1 - static_cast<std::size_t>(rank)];
    w.stop_s = hold_end + static_cast<double>(rank / plan.rampdown_per_s);
  }
  return out;
}

int active_threads(const std::vector<ThreadWindow>& schedule, double t_s) {
  int n = 0;
  for (const auto& w : schedule) n += (w.start_s <= t_s && t_s < w.stop_s) ? 1 : 0;
  return n;
}

namespace {

using SteadyClock = std::chrono::steady_clock;

struct Endpoint {
  std::string host;
  int port = 80;
};

Endpoint parse_base_url(const std::string& url) {
  std::string rest = url;
  if (rest.rfind("http://", 0) == 0) rest = rest.substr(7);
  if (auto slash = rest.find('/'); slash != std::string::npos) rest = rest.substr(0, slash);
  Endpoint e;
  if (auto colon = rest.rfind(':'); colon != std::string::npos) {
    e.host = rest.substr(0, colon);
    e.port = std::stoi(rest.substr(colon + 1));
  } else {
    e.host = rest;
  }
  if (e.host.empty()) throw std::invalid_argument("base_url has no host: " + url);
  return e;
}

std::uint64_t header_bytes(const httplib::Headers& headers) {
  std::uint64_t n = 0;
  for (const auto& [k, v] : headers) n += k.size() + v.size() + 4;
  return n;
}

class VirtualUser {
 public:
  VirtualUser(const LoadPlan& plan, const Endpoint& ep, int index, std::string run_tag)
      : plan_(plan), client_(ep.host, ep.port), index_(index), run_tag_(std::move(run_tag)),
        rng_(static_cast<std::uint64_t>(index) * 7919 + 17) {
    client_.set_keep_alive(true);
    client_.set_tcp_nodelay(true);
    client_.set_connection_timeout(5);
    client_.set_read_timeout(30);
    for (const auto& [label, w] : plan.mix) {
      if (w > 0) {
        labels_.push_back(label);
        weights_.push_back(w);
      }
    }
  }

  bool login() {
    const std::string user = "bench-" + run_tag_ + "-" + std::to_string(index_);
    const json creds = {{"username", user}, {"password", "bench-pass"}};
    auto reg = client_.Post("/auth/register", creds.dump(), "application/json");
    if (!reg || (reg->status != 201 && reg->status != 409)) return false;
    auto res = client_.Post("/auth/login", creds.dump(), "application/json");
    if (!res || res->status != 200) return false;
    token_ = json::parse(res->body).at("token").get<std::string>();
    return true;
  }

  bool needs_login() const {
    return std::find(labels_.begin(), labels_.end(), "purchase") != labels_.end();
  }

  Sample issue(SteadyClock::time_point run_start) {
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    const auto& label = labels_[pick(rng_)];
    return label == "query" ? query(run_start) : purchase(run_start);
  }

 private:
  template <typename Fn>
  Sample timed(const std::string& label, SteadyClock::time_point run_start,
               std::uint64_t bytes_out, Fn&& fn) {
    Sample s;
    s.label = label;
    const auto t0 = SteadyClock::now();
    httplib::Result res = fn();
    const auto t1 = SteadyClock::now();
    s.start_ms = std::chrono::duration<double, std::milli>(t0 - run_start).count();
    s.rt_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    s.bytes_out = bytes_out;
    if (res) {
      s.ok = res->status >= 200 && res->status < 300;
      s.bytes_in = res->body.size() + header_bytes(res->headers) + 17;
    }
    return s;
  }

  Sample query(SteadyClock::time_point run_start) {
    const auto& q = plan_.query;
    const std::string path = "/trains/query?date=" + q.date + "&departure=" + q.departure +
                             "&arrival=" + q.arrival;
    return timed("query", run_start, path.size() + 64, [&] { return client_.Get(path); });
  }

  Sample purchase(SteadyClock::time_point run_start) {
    const httplib::Headers auth = {{"Authorization", "Bearer " + token_}};
    auto form = client_.Get("/tickets/form-token", auth);
    const auto& p = plan_.purchase;
    const auto& date = p.dates[counter_ % p.dates.size()];
    const json body = {
        {"dedup", form && form->status == 200 ? json::parse(form->body).value("dedup", "") : ""},
        {"train_id", p.train_id},
        {"date", date},
        {"departure", p.departure},
        {"arrival", p.arrival},
        {"seat_type", p.seat_type},
        {"passengers",
         {{{"name", "Bench User"},
           {"id_number", "11010119900101" + std::to_string(1000 + (index_ * 131 + counter_) % 9000)}}}}};
    ++counter_;
    const auto payload = body.dump();
    return timed("purchase", run_start, payload.size() + header_bytes(auth) + 64,
                 [&] { return client_.Post("/tickets/purchase", auth, payload, "application/json"); });
  }

  const LoadPlan& plan_;
  httplib::Client client_;
  int index_;
  std::string run_tag_;
  std::mt19937_64 rng_;
  std::vector<std::string> labels_;
  std::vector<double> weights_;
  std::string token_;
  std::size_t counter_ = 0;
};

}  // namespace

RunResult run_plan(const LoadPlan& plan) {
  const auto schedule = ramp_schedule(plan);
  const auto ep = parse_base_url(plan.base_url);
  RunResult result;

  {
    httplib::Client probe(ep.host, ep.port);
    probe.set_connection_timeout(3);
    auto res = probe.Get("/health");
    if (!res || res->status != 200) {
      result.valid = false;
      result.invalid_reason = "engine unreachable at " + plan.base_url;
      return result;
    }
  }

  const std::string run_tag = std::to_string(
      std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  std::mutex samples_mu;
  std::atomic<bool> setup_failed{false};
  const auto run_start = SteadyClock::now();
  auto at = [&](double s) {
    return run_start + std::chrono::duration_cast<SteadyClock::duration>(
                           std::chrono::duration<double>(s));
  };

  std::vector<std::thread> threads;
  threads.reserve(schedule.size());
  for (const auto& window : schedule) {
    threads.emplace_back([&, window] {
      VirtualUser vu(plan, ep, window.index, run_tag);
      std::this_thread::sleep_until(at(window.start_s));
      if (vu.needs_login() && !vu.login()) {
        setup_failed = true;
        return;
      }
      std::vector<Sample> local;
      const auto stop = at(window.stop_s);
      while (SteadyClock::now() < stop) {
        local.push_back(vu.issue(run_start));
        if (plan.think_time_ms > 0) {
          std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(plan.think_time_ms));
        }
      }
      std::lock_guard lock(samples_mu);
      result.samples.insert(result.samples.end(), local.begin(), local.end());
    });
  }
  for (auto& t : threads) t.join();
  result.wall_s = std::chrono::duration<double>(SteadyClock::now() - run_start).count();
  if (setup_failed) {
    result.valid = false;
    result.invalid_reason = "virtual user login failed";
  }
  std::sort(result.samples.begin(), result.samples.end(),
            [](const Sample& a, const Sample& b) { return a.start_ms < b.start_ms; });
  return result;
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw EmptySampleSetError("percentile of an empty sample set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

const ReportRow* RunReport::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return &r;
  }
  return nullptr;
}

namespace {

ReportRow summarize_one(const std::string& label, const std::vector<const Sample*>& samples) {
  ReportRow row;
  row.label = label;
  row.samples = samples.size();
  std::vector<double> rt;
  double first = samples.front()->start_ms;
  double last = 0;
  std::uint64_t failed = 0, in = 0, out = 0;
  for (const auto* s : samples) {
    rt.push_back(s->rt_ms);
    first = std::min(first, s->start_ms);
    last = std::max(last, s->start_ms + s->rt_ms);
    failed += s->ok ? 0 : 1;
    in += s->bytes_in;
    out += s->bytes_out;
  }
  std::sort(rt.begin(), rt.end());
  double sum = 0;
  for (double v : rt) sum += v;
  row.average_ms = sum / static_cast<double>(rt.size());
  row.median_ms = nearest_rank_percentile(rt, 50);
  row.p90_ms = nearest_rank_percentile(rt, 90);
  row.p99_ms = nearest_rank_percentile(rt, 99);
  row.min_ms = rt.front();
  row.max_ms = rt.back();
  row.error_rate_pct = 100.0 * static_cast<double>(failed) / static_cast<double>(rt.size());
  const double active_s = std::max(last - first, 1e-3) / 1000.0;
  row.throughput_per_s = static_cast<double>(rt.size()) / active_s;
  row.receive_kb_s = static_cast<double>(in) / 1024.0 / active_s;
  row.send_kb_s = static_cast<double>(out) / 1024.0 / active_s;
  return row;
}

}  // namespace

RunReport summarize(const std::vector<Sample>& samples) {
  if (samples.empty()) throw EmptySampleSetError("cannot summarize an empty sample set");
  std::map<std::string, std::vector<const Sample*>> by_label;
  std::vector<const Sample*> all;
  for (const auto& s : samples) {
    by_label[s.label].push_back(&s);
    all.push_back(&s);
  }
  RunReport report;
  for (const auto& [label, group] : by_label) report.rows.push_back(summarize_one(label, group));
  report.rows.push_back(summarize_one("TOTAL", all));
  return report;
}

std::string report_csv(const RunReport& report) {
  std::string out =
      "Label,Samples,Average,Median,90th,99th,Min,Max,Anomaly Rate,Throughput,Receive KB/s,"
      "Send KB/s\n";
  char buf[512];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.2f%%,%.2f,%.2f,%.2f\n",
                  r.label.c_str(), static_cast<unsigned long long>(r.samples), r.average_ms,
                  r.median_ms, r.p90_ms, r.p99_ms, r.min_ms, r.max_ms, r.error_rate_pct,
                  r.throughput_per_s, r.receive_kb_s, r.send_kb_s);
    out += buf;
  }
  return out;
}

}  // namespace ticketing::bench
