#include <csignal>
#include <set>
#include <sstream>
#include <thread>

#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include "helpers.hpp"
#include "ricebot/store.hpp"

using namespace ricebot;
using namespace ricebot::store;
using ricebot::testing::TempDir;

namespace {

NewJob new_job(const std::string& msg, const std::string& user = "U1") {
  return {msg, user, "G1", "rt-" + msg};
}

detector::DetectionResponse prediction(const ClassRegistry& reg,
                                       std::initializer_list<const char*> classes) {
  detector::DetectionResponse r;
  r.model_version = "test";
  double conf = 0.9;
  for (const char* c : classes) {
    r.detections.emplace_back(BoundingBox(0, 0, 10, 10), reg.at(c), conf);
    conf -= 0.1;
  }
  return r;
}

// queued -> running -> done with the given timing.
JobRecord finish(Store& s, const std::string& id, detector::DetectionResponse pred,
                 std::int64_t start_wall = 1000, std::int64_t duration = 250) {
  const Instant start{start_wall, 50, "E"};
  const Instant end{start_wall + duration, 50 + duration, "E"};
  s.transition_job(id, JobStatus::kRunning, {.start = start});
  return s.transition_job(id, JobStatus::kDone, {.end = end, .prediction = std::move(pred)});
}

FeedbackRecord verdict(const std::string& job, Verdict v, std::optional<DiseaseClass> cls = {},
                       std::int64_t ts = 0, const std::string& who = "S1") {
  FeedbackRecord f;
  f.job_id = job;
  f.specialist_id = who;
  f.verdict = v;
  f.corrected_class = cls;
  f.timestamp_ms = ts;
  return f;
}

}  // namespace

TEST_CASE("job references") {
  CHECK(parse_job_ref("J42") == 42);
  CHECK(parse_job_ref("j7") == 7);
  CHECK_FALSE(parse_job_ref("J"));
  CHECK_FALSE(parse_job_ref("42"));
  CHECK_FALSE(parse_job_ref("J4x"));
  CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(percentile({5}, 0.95) == 5);
  CHECK(percentile({0, 10}, 0.95) == doctest::Approx(9.5));
}

TEST_CASE("job lifecycle") {
  Store s(":memory:");
  const auto j = s.create_job(new_job("m1"), 500);
  REQUIRE(j);
  CHECK(j->job_id == "J1");
  CHECK(j->status == JobStatus::kQueued);
  CHECK(j->created_ms == 500);
  CHECK_FALSE(s.create_job(new_job("m1")));
  CHECK(s.find_job_by_message("m1")->job_id == "J1");
  CHECK_FALSE(s.find_job_by_message("nope"));

  CHECK_THROWS_AS(s.transition_job("J1", JobStatus::kDone, {.prediction = prediction(s.registry(), {})}),
                  IllegalTransition);
  s.transition_job("J1", JobStatus::kRunning, {.start = Instant{1000, 10, "E"}});
  CHECK_THROWS_AS(s.transition_job("J1", JobStatus::kDone), InvalidArgument);
  const auto done = s.transition_job("J1", JobStatus::kDone,
                                     {.end = Instant{1400, 330, "E"},
                                      .prediction = prediction(s.registry(), {"blast"})});
  CHECK(done.status == JobStatus::kDone);
  CHECK(done.start_ms == 1000);
  CHECK(done.end_ms == 1400);
  // Same epoch: the monotonic difference wins.
  CHECK(done.duration_ms == 320);
  CHECK(done.prediction->detections.size() == 1);
  CHECK_THROWS_AS(s.transition_job("J1", JobStatus::kRunning), IllegalTransition);
  CHECK_THROWS_AS(s.transition_job("J1", JobStatus::kFailed), IllegalTransition);
  CHECK(s.transition_job("J1", JobStatus::kSkippedNoReply).status == JobStatus::kSkippedNoReply);
  CHECK_THROWS_AS(s.transition_job("J9", JobStatus::kRunning), UnknownJob);
  CHECK_THROWS_AS(s.get_job("bogus"), UnknownJob);

  s.create_job(new_job("m2"));
  CHECK(s.transition_job("J2", JobStatus::kFailed, {.reason = "content fetch failed"}).reason ==
        "content fetch failed");

  // Different epochs fall back to wall clock, never negative.
  s.create_job(new_job("m3"));
  s.transition_job("J3", JobStatus::kRunning, {.start = Instant{2000, 999999, "A"}});
  const auto j3 = s.transition_job("J3", JobStatus::kDone,
                                   {.end = Instant{1990, 5, "B"},
                                    .prediction = prediction(s.registry(), {})});
  CHECK(j3.duration_ms == 0);
  CHECK(*j3.end_ms >= *j3.start_ms);

  const auto u = s.update_job("J3", {.reply_message_ids = std::vector<std::string>{"a", "b"}});
  CHECK(u.reply_message_ids.size() == 2);
  CHECK(u.status == JobStatus::kDone);
  CHECK(s.job_count() == 3);
  CHECK(s.list_jobs({.status = JobStatus::kFailed}).size() == 1);
  CHECK(s.list_jobs({.period = {.from_ms = 600}}).size() == 2);
}

TEST_CASE("legal transitions table") {
  using S = JobStatus;
  const std::set<std::pair<S, S>> legal{{S::kQueued, S::kRunning}, {S::kQueued, S::kFailed},
                                        {S::kRunning, S::kDone},   {S::kRunning, S::kFailed},
                                        {S::kDone, S::kSkippedNoReply}};
  const S all[] = {S::kQueued, S::kRunning, S::kDone, S::kFailed, S::kSkippedNoReply};
  for (S a : all)
    for (S b : all) CHECK(is_legal_transition(a, b) == (legal.count({a, b}) == 1));
}

TEST_CASE("event dedup window") {
  Store s(":memory:");
  EventRecord e{"m1", "message", "image", "U1", "G1", "rt", 1, ""};
  const std::int64_t t0 = 10'000'000'000;
  CHECK(s.append_event(e, t0));
  CHECK_FALSE(s.append_event(e, t0 + 1000));
  CHECK_FALSE(s.append_event(e, t0 + kDedupWindowMs - 1));
  CHECK(s.append_event(e, t0 + kDedupWindowMs + 1));
  EventRecord follow{"", "follow", "", "U2", "", "rt2", 2, ""};
  CHECK(s.append_event(follow, t0));
  CHECK(s.append_event(follow, t0));
  CHECK(s.event_count() == 4);
}

TEST_CASE("users and feedback") {
  Store s(":memory:");
  s.upsert_user({"S1", Role::kSpecialist, "Dr. A"});
  s.upsert_user({"S1", Role::kAdmin, "Dr. A"});
  CHECK(s.get_user("S1")->role == Role::kAdmin);
  CHECK_FALSE(s.get_user("nobody"));
  s.create_job(new_job("m1"));
  finish(s, "J1", prediction(s.registry(), {"blast"}));

  const auto f = s.record_feedback(verdict("J1", Verdict::kWrongClass, s.registry().at("bsp")));
  CHECK(f.feedback_id == "F1");
  CHECK(f.timestamp_ms > 0);
  CHECK_THROWS_AS(s.record_feedback(verdict("J1", Verdict::kWrongClass, s.registry().at("nbs"))),
                  DuplicateFeedback);
  CHECK_NOTHROW(s.record_feedback(verdict("J1", Verdict::kWrongClass, s.registry().at("nbs"), 0, "S2")));
  CHECK_THROWS_AS(s.record_feedback(verdict("J1", Verdict::kWrongClass)), InvalidArgument);
  CHECK_THROWS_AS(s.record_feedback(verdict("J1", Verdict::kConfirm, s.registry().at("nbs"))),
                  InvalidArgument);
  CHECK_THROWS_AS(s.record_feedback(verdict("J8", Verdict::kConfirm)), UnknownJob);
  CHECK(s.list_feedback("J1").size() == 2);
  CHECK(s.list_jobs({.verdict = Verdict::kWrongClass}).size() == 1);
  CHECK(s.list_jobs({.verdict = Verdict::kConfirm}).empty());

  s.append_audit({5, "U1", "command_ignored", "/confirm J1"});
  REQUIRE(s.audit_log().size() == 1);
  CHECK(s.audit_log()[0].action == "command_ignored");
}

TEST_CASE("deployment ATP follows the latest verdict") {
  Store s(":memory:");
  const auto& reg = s.registry();
  auto add = [&](const std::string& msg, std::int64_t created,
                 std::initializer_list<const char*> classes) {
    const auto j = s.create_job(new_job(msg), created);
    finish(s, j->job_id, prediction(reg, classes));
    return j->job_id;
  };
  const auto a = add("a", 100, {"blast"});           // confirmed
  const auto b = add("b", 200, {"blast", "bsp"});    // corrected to bsp
  const auto c = add("c", 300, {"nbs"});             // not a disease
  const auto d = add("d", 400, {"streak"});          // unverified
  const auto e = add("e", 500, {});                  // silent, unverified
  const auto f = add("f", 600, {"blight"});          // corrected, then confirmed
  s.create_job(new_job("g"), 700);                   // still queued
  s.record_feedback(verdict(a, Verdict::kConfirm, {}, 10));
  s.record_feedback(verdict(b, Verdict::kWrongClass, reg.at("bsp"), 11));
  s.record_feedback(verdict(c, Verdict::kNotDisease, {}, 12));
  s.record_feedback(verdict(f, Verdict::kWrongClass, reg.at("nbs"), 13));
  s.record_feedback(verdict(f, Verdict::kConfirm, {}, 14));

  const auto v = s.deployment_atp({});
  // Hand-extracted samples: a {blast}->{blast} 1, b {bsp}<-{blast,bsp} 0.5,
  // f {blight}->{blight} 1.
  REQUIRE(v.samples.size() == 3);
  CHECK(v.included == 3);
  CHECK(v.jobs_considered == 7);
  CHECK(v.excluded_non_target == 1);
  CHECK(v.excluded_unverified == 2);
  CHECK(v.excluded_incomplete == 1);
  CHECK(v.excluded_percent == doctest::Approx(400.0 / 7));
  CHECK(v.report.total.point_sum == doctest::Approx(2.5));
  CHECK(v.report.total.atp_percent == doctest::Approx(2.5 / 3 * 100));
  CHECK(v.report.per_class.at(reg.at("bsp")).atp_percent == doctest::Approx(50.0));
  CHECK(v.report.per_class.count(reg.at("nbs")) == 0);

  const auto all = s.deployment_atp({}, false);
  // d counts as confirmed; e has nothing to confirm.
  CHECK(all.included == 4);
  CHECK(all.excluded_unverified == 1);
  CHECK(all.report.total.point_sum == doctest::Approx(3.5));

  const auto window = s.deployment_atp({.from_ms = 150, .to_ms = 600});
  CHECK(window.jobs_considered == 4);
  CHECK(window.included == 1);
  (void)d;
  (void)e;
}

TEST_CASE("deployment ATP with nothing verified") {
  Store s(":memory:");
  for (int i = 0; i < 4; ++i) {
    const auto j = s.create_job(new_job("m" + std::to_string(i)));
    finish(s, j->job_id, prediction(s.registry(), {"blast"}));
  }
  const auto v = s.deployment_atp({});
  CHECK(v.included == 0);
  CHECK(v.report.total.image_count == 0);
  CHECK(v.report.total.atp_percent == 0);
  CHECK(v.excluded_percent == 100);
  CHECK(s.deployment_atp({}, false).report.total.atp_percent == doctest::Approx(100));
}

TEST_CASE("latency report") {
  Store s(":memory:");
  const std::int64_t durations[] = {100, 400, 200, 300, 1000};
  for (int i = 0; i < 5; ++i) {
    const auto j = s.create_job(new_job("m" + std::to_string(i)), 10 * i);
    finish(s, j->job_id, prediction(s.registry(), {}), 1000, durations[i]);
  }
  s.create_job(new_job("pending"), 5);
  const auto r = s.latency_report({});
  CHECK(r.count == 5);
  CHECK(r.min_ms == 100);
  CHECK(r.median_ms == 300);
  CHECK(r.p95_ms == doctest::Approx(880));
  CHECK(r.max_ms == 1000);
  CHECK(s.latency_report({.from_ms = 15}).count == 3);
  CHECK(s.latency_report({.from_ms = 1000}).count == 0);
}

TEST_CASE("export and import keep ids") {
  Store s(":memory:");
  s.upsert_user({"S1", Role::kSpecialist, ""});
  for (int i = 0; i < 3; ++i) s.create_job(new_job("m" + std::to_string(i)), 100 + i);
  finish(s, "J2", prediction(s.registry(), {"nbs", "streak"}));
  s.transition_job("J3", JobStatus::kFailed, {.reason = "queue full"});
  s.record_feedback(verdict("J2", Verdict::kWrongClass, s.registry().at("blast"), 77));
  std::stringstream dump;
  s.export_jsonl(dump);

  Store t(":memory:");
  std::stringstream in(dump.str());
  CHECK(t.import_jsonl(in) == 5);
  std::stringstream again;
  t.export_jsonl(again);
  CHECK(again.str() == dump.str());
  CHECK(t.get_job("J2").prediction->detections.size() == 2);
  CHECK(t.list_feedback()[0].feedback_id == "F1");
  // New jobs continue after the imported ones.
  CHECK(t.create_job(new_job("later"))->job_id == "J4");

  std::stringstream broken("{\"record\":\"user\",\"user_id\":\"x\",\"role\":\"farmer\"}\n{\"record\":\"job\"}\n");
  Store u(":memory:");
  try {
    u.import_jsonl(broken);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("concurrent job creation is exactly-once") {
  TempDir dir;
  Store s(dir.file("logs.db"));
  std::vector<std::thread> threads;
  std::atomic<int> created{0};
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 1000; ++i)
        if (s.create_job(new_job("m" + std::to_string(i)))) ++created;
    });
  for (auto& t : threads) t.join();
  CHECK(created == 1000);
  CHECK(s.job_count() == 1000);
  std::set<std::string> ids;
  for (const auto& j : s.list_jobs()) ids.insert(j.job_id);
  CHECK(ids.size() == 1000);
}

TEST_CASE("committed jobs survive SIGKILL") {
  TempDir dir;
  const std::string path = dir.file("logs.db");
  int fds[2];
  REQUIRE(::pipe(fds) == 0);
  const pid_t pid = ::fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    ::close(fds[0]);
    Store s(path);
    for (int i = 0;; ++i) {
      const auto j = s.create_job(new_job("m" + std::to_string(i)));
      s.transition_job(j->job_id, JobStatus::kRunning, {.start = Instant::now()});
      // Acknowledge only after the commit.
      const std::int32_t n = i + 1;
      if (::write(fds[1], &n, sizeof n) != sizeof n) ::_exit(1);
    }
  }
  ::close(fds[1]);
  std::int32_t acked = 0, n = 0;
  while (acked < 200 && ::read(fds[0], &n, sizeof n) == sizeof n) acked = n;
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  while (::read(fds[0], &n, sizeof n) == sizeof n) acked = n;
  ::close(fds[0]);
  CHECK(WIFSIGNALED(status));

  Store s(path);
  CHECK(s.job_count() >= acked);
  for (int i = 0; i < acked; ++i) {
    const auto j = s.find_job_by_message("m" + std::to_string(i));
    REQUIRE(j);
    CHECK(j->status == JobStatus::kRunning);
  }
  // Still writable after recovery.
  CHECK(s.create_job(new_job("after")));
}
