#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "ticketing/recordstore.hpp"
#include "ticketing/schema.hpp"

using namespace ticketing;
using namespace ticketing::store;
using namespace std::chrono_literals;

namespace {

Columns seat_row(const std::string& legs, int seat = 1) {
  return {{"train_id", std::string("G1")},
          {"service_date", std::string("2026-11-01")},
          {"seat_type", std::string("second")},
          {"carriage_no", std::int64_t{1}},
          {"seat_no", std::int64_t{seat}},
          {"stations", std::string("A,B,C")},
          {"legs", legs}};
}

std::string seat_pk(int seat) { return schema::seat_primary_key("G1", "2026-11-01", 1, seat); }

struct Pipeline {
  RecordStore store{[] { return std::int64_t{1000}; }};
  kv::KvCache cache;
  mq::MessageBus bus;
  CdcPump pump{store, bus};
  CacheApplier applier{cache, bus};
  std::set<std::string> filter{"t_seat", "t_train"};
  std::vector<std::string> topics{"cdc.t_seat", "cdc.t_train"};

  Pipeline() {
    store.create_table("t_seat");
    store.create_table("t_train");
    store.create_table("t_user");
  }
  void drain() {
    pump.pump_changes(filter);
    while (applier.consume_once(topics, 1000, 10s).applied > 0) {
    }
  }
};

}  // namespace

TEST(RecordStore, InsertProducesInsertEventWithImage) {
  RecordStore store([] { return std::int64_t{42}; });
  store.create_table("t");
  auto events = store.commit({Mutation::insert("t", "k1", {{"count", std::int64_t{5}}})});
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].sequence, 1u);
  EXPECT_EQ(events[0].op, ChangeOp::kInsert);
  EXPECT_FALSE(events[0].before.has_value());
  EXPECT_EQ(std::get<std::int64_t>(events[0].after->at("count")), 5);
  EXPECT_EQ(std::get<std::string>(events[0].after->at("pk")), "k1");
  EXPECT_EQ(std::get<std::int64_t>(events[0].after->at("version")), 1);
  EXPECT_EQ(events[0].commit_time_ms, 42);
  EXPECT_EQ(store.get("t", "k1")->integer("count"), 5);
}

TEST(RecordStore, UpdateCarriesBeforeAndAfter) {
  RecordStore store;
  store.create_table("t");
  store.commit({Mutation::insert("t", "k", {{"count", std::int64_t{5}}, {"name", std::string("x")}})});
  auto ev = store.commit({Mutation::update("t", "k", {{"count", std::int64_t{4}}})}).at(0);
  EXPECT_EQ(std::get<std::int64_t>(ev.before->at("count")), 5);
  EXPECT_EQ(std::get<std::int64_t>(ev.after->at("count")), 4);
  EXPECT_EQ(std::get<std::string>(ev.after->at("name")), "x");
  EXPECT_EQ(store.get("t", "k")->version, 2);
}

TEST(RecordStore, FailedCommitChangesNothing) {
  RecordStore store;
  store.create_table("t");
  store.commit({Mutation::insert("t", "a", {{"v", std::int64_t{1}}})});
  EXPECT_THROW(store.commit({Mutation::update("t", "a", {{"v", std::int64_t{2}}}),
                             Mutation::update("t", "missing", {{"v", std::int64_t{3}}})}),
               CommitError);
  EXPECT_EQ(store.last_sequence(), 1u);
  EXPECT_EQ(store.get("t", "a")->integer("v"), 1);
  EXPECT_THROW(store.commit({Mutation::insert("t", "a", {})}), CommitError);
  EXPECT_THROW(store.commit({Mutation::insert("t", "b", {{"pk", std::string("x")}})}), CommitError);
  EXPECT_THROW(store.commit({Mutation::insert("nope", "b", {})}), CommitError);
  EXPECT_EQ(store.last_sequence(), 1u);
}

TEST(RecordStore, MutationsWithinOneCommitSeeEachOther) {
  RecordStore store;
  store.create_table("t");
  auto events = store.commit({Mutation::insert("t", "a", {{"v", std::int64_t{1}}}),
                              Mutation::update("t", "a", {{"v", std::int64_t{2}}}),
                              Mutation::remove("t", "a")});
  EXPECT_EQ(events.size(), 3u);
  EXPECT_FALSE(store.get("t", "a").has_value());
  // A re-insert outranks every earlier version, including the delete.
  store.commit({Mutation::insert("t", "a", {{"v", std::int64_t{9}}})});
  EXPECT_EQ(store.get("t", "a")->version, 4);
}

TEST(RecordStore, ScansAndShardedTables) {
  RecordStore store;
  store.create_table("t_order_0_0", "t_order");
  store.create_table("t_order_0_1", "t_order");
  store.commit({Mutation::insert("t_order_0_0", "a#1", {}), Mutation::insert("t_order_0_1", "a#2", {}),
                Mutation::insert("t_order_0_1", "b#1", {})});
  EXPECT_EQ(store.logical_name("t_order_0_1"), "t_order");
  EXPECT_EQ(store.tables_of("t_order").size(), 2u);
  EXPECT_EQ(store.scan_logical("t_order").size(), 3u);
  EXPECT_EQ(store.scan_prefix("t_order_0_1", "a#").size(), 1u);
  EXPECT_EQ(store.changes_since(2, 10).size(), 2u);
  EXPECT_EQ(store.changes_since(1, 1).size(), 1u);
}

TEST(RecordStore, CdcJsonRoundTrip) {
  ChangeEvent ev;
  ev.sequence = 7;
  ev.table = "t_seat";
  ev.op = ChangeOp::kUpdate;
  ev.before = Columns{{"pk", std::string("k")}, {"version", std::int64_t{1}}, {"legs", std::string("00")}};
  ev.after = Columns{{"pk", std::string("k")}, {"version", std::int64_t{2}}, {"legs", std::string("10")}};
  ev.commit_time_ms = 123;
  const auto text = to_cdc_json(ev);
  const auto back = parse_cdc_json(text);
  EXPECT_EQ(back.sequence, 7u);
  EXPECT_EQ(back.table, "t_seat");
  EXPECT_EQ(back.op, ChangeOp::kUpdate);
  EXPECT_EQ(back.before, ev.before);
  EXPECT_EQ(back.after, ev.after);
  EXPECT_EQ(back.commit_time_ms, 123);
  EXPECT_EQ(to_cdc_json(back), text);
}

TEST(RecordStore, CdcJsonRejectsMalformed) {
  for (const char* bad : {
           "not json",
           "[]",
           R"({"seq":1,"table":"t","op":"INSERT","before":null,"ts":1})",
           R"({"seq":1,"table":"t","op":"MERGE","before":null,"after":{"pk":"k","version":1},"ts":1})",
           R"({"seq":1,"table":"t","op":"INSERT","before":{"pk":"k","version":1},"after":null,"ts":1})",
           R"({"seq":1,"table":"t","op":"INSERT","before":null,"after":{"version":1},"ts":1})",
           R"({"seq":"1","table":"t","op":"INSERT","before":null,"after":{"pk":"k","version":1},"ts":1})",
       }) {
    EXPECT_THROW(parse_cdc_json(bad), MalformedEventError) << bad;
  }
}

TEST(RecordStore, LogFileReplays) {
  const auto path = std::filesystem::temp_directory_path() / "recordstore_replay_test.log";
  std::filesystem::remove(path);
  {
    RecordStore store;
    store.create_table("t");
    store.attach_log_file(path);
    store.commit({Mutation::insert("t", "a", {{"v", std::int64_t{1}}})});
    store.commit({Mutation::update("t", "a", {{"v", std::int64_t{2}}})});
  }
  RecordStore again;
  again.create_table("t");
  again.attach_log_file(path);
  EXPECT_EQ(again.last_sequence(), 2u);
  EXPECT_EQ(again.get("t", "a")->integer("v"), 2);
  EXPECT_EQ(again.get("t", "a")->version, 2);
  std::filesystem::remove(path);
}

TEST(CdcPump, FiltersAndTracksPosition) {
  Pipeline p;
  EXPECT_EQ(p.pump.pump_changes({"t_seat"}), 0u);
  for (int i = 1; i <= 3; ++i) p.store.commit({Mutation::insert("t_seat", seat_pk(i), seat_row("00", i))});
  p.store.commit({Mutation::insert("t_user", "u1", {}), Mutation::insert("t_user", "u2", {})});
  EXPECT_EQ(p.pump.pump_changes({"t_seat"}), 3u);
  EXPECT_EQ(p.pump.pump_changes({"t_seat"}), 0u);
  EXPECT_EQ(p.bus.published("cdc.t_seat"), 3u);
  EXPECT_EQ(p.pump.position(), 6u);
}

TEST(CacheApplier, SeatEventRewritesRemainingCounts) {
  Pipeline p;
  p.store.commit({Mutation::insert("t_seat", seat_pk(1), seat_row("00", 1)),
                  Mutation::insert("t_seat", seat_pk(2), seat_row("00", 2))});
  p.drain();
  const auto key = schema::remaining_key("G1", "2026-11-01");
  auto count = [&](const char* field) { return std::get<std::int64_t>(*p.cache.hash_get(key, field)); };
  EXPECT_EQ(count("A_B_second"), 2);
  EXPECT_EQ(count("A_C_second"), 2);
  p.store.commit({Mutation::update("t_seat", seat_pk(1), {{"legs", std::string("10")}})});
  p.drain();
  EXPECT_EQ(count("A_B_second"), 1);
  EXPECT_EQ(count("B_C_second"), 2);
  EXPECT_EQ(count("A_C_second"), 1);
  EXPECT_TRUE(verify_convergence(p.store, p.cache, {"t_train"}).convergent());
}

TEST(CacheApplier, RedeliveryAndReorderingAreSkipped) {
  Pipeline p;
  p.store.commit({Mutation::insert("t_seat", seat_pk(1), seat_row("00"))});
  p.store.commit({Mutation::update("t_seat", seat_pk(1), {{"legs", std::string("10")}})});
  p.store.commit({Mutation::update("t_seat", seat_pk(1), {{"legs", std::string("11")}})});
  p.pump.pump_changes(p.filter);
  auto msgs = p.bus.poll("cdc.t_seat", "probe", 10, 10s);
  ASSERT_EQ(msgs.size(), 3u);

  // Every order of the three events ends in the newest state.
  std::vector<int> order{0, 1, 2};
  do {
    kv::KvCache cache;
    CacheApplier applier(cache, p.bus);
    std::vector<ApplyResult> results;
    for (int i : order) results.push_back(applier.apply_change_message(msgs[i]));
    EXPECT_EQ(applier.apply_change_message(msgs[order.back()]), ApplyResult::kSkippedStale);
    EXPECT_TRUE(verify_convergence(p.store, cache, {}).convergent());
    for (std::size_t i = 1; i < order.size(); ++i) {
      const bool older_than_seen =
          *std::max_element(order.begin(), order.begin() + static_cast<long>(i)) > order[i];
      EXPECT_EQ(results[i] == ApplyResult::kSkippedStale, older_than_seen);
    }
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST(CacheApplier, RowTablesAndDeletes) {
  Pipeline p;
  p.store.commit({Mutation::insert("t_train", "G1", {{"stations", std::string("A,B")}})});
  p.drain();
  EXPECT_TRUE(verify_convergence(p.store, p.cache, {"t_train"}).convergent());
  p.store.commit({Mutation::update("t_train", "G1", {{"stations", std::string("A,B,C")}})});
  EXPECT_FALSE(verify_convergence(p.store, p.cache, {"t_train"}).convergent());
  p.drain();
  EXPECT_TRUE(verify_convergence(p.store, p.cache, {"t_train"}).convergent());
  p.store.commit({Mutation::remove("t_train", "G1")});
  p.drain();
  const auto cached = p.cache.get(schema::cached_row_key("t_train", "G1"));
  ASSERT_TRUE(cached.has_value());
  EXPECT_NE(cached->find("\"deleted\":true"), std::string::npos);
}

TEST(CacheApplier, PoisonMessagesGoToDeadLetter) {
  Pipeline p;
  p.bus.publish("cdc.t_seat", "garbage");
  p.bus.publish("cdc.t_seat",
                R"({"seq":1,"table":"t_seat","op":"INSERT","before":null,"after":{"pk":"k","version":1},"ts":1})");
  auto stats = p.applier.consume_once({"cdc.t_seat"}, 10, 10s);
  EXPECT_EQ(stats.poisoned, 2u);
  EXPECT_EQ(p.bus.published(std::string(schema::kDeadLetterTopic)), 2u);
  EXPECT_EQ(p.bus.unacked("cdc.t_seat", p.applier.group()), 0u);
}

TEST(CacheApplier, LostAcksAndRestartsStillConverge) {
  Pipeline p;
  std::mt19937 rng(3);
  std::vector<std::string> legs(4, "00");
  for (int i = 1; i <= 4; ++i) p.store.commit({Mutation::insert("t_seat", seat_pk(i), seat_row("00", i))});
  for (int step = 0; step < 300; ++step) {
    const int seat = 1 + static_cast<int>(rng() % 4);
    const std::string next = std::string(1, "01"[rng() % 2]) + "01"[rng() % 2];
    p.store.commit({Mutation::update("t_seat", seat_pk(seat), {{"legs", next}})});
    if (step % 7 == 0) {
      p.pump.pump_changes(p.filter);
      // Drop roughly a third of acks, then let a fresh applier take over.
      p.applier.consume_once(p.topics, 5, 0ms, [&](const mq::BusMessage&) { return rng() % 3 != 0; });
    }
  }
  CacheApplier restarted(p.cache, p.bus);
  p.pump.pump_changes(p.filter);
  for (int round = 0; round < 10 && p.bus.unacked("cdc.t_seat", restarted.group()) > 0; ++round) {
    restarted.consume_once(p.topics, 1000, 0ms);
  }
  EXPECT_EQ(p.bus.unacked("cdc.t_seat", restarted.group()), 0u);
  EXPECT_TRUE(verify_convergence(p.store, p.cache, {"t_train"}).convergent());
}

TEST(Convergence, EmptyStoreIsConvergent) {
  RecordStore store;
  store.create_table("t_seat");
  kv::KvCache cache;
  EXPECT_TRUE(verify_convergence(store, cache, {}).convergent());
}
