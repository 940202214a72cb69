#pragma once

// The logs database: users, chat events, inference jobs with timing,
// predictions and specialist feedback, backed by an embedded SQLite file.
// All methods are safe to call from multiple threads.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ricebot/metrics.hpp"
#include "ricebot/records.hpp"

struct sqlite3;

namespace ricebot::store {

inline constexpr std::int64_t kDedupWindowMs = 24LL * 60 * 60 * 1000;

struct EventRecord {
  std::string message_id;  // empty for non-message events
  std::string event_type;  // "message", "follow", ...
  std::string message_type;
  std::string user_id;
  std::string group_id;
  std::string reply_token;
  std::int64_t platform_ts = 0;
  std::string text;
};

struct NewJob {
  std::string message_id;
  std::string user_id;
  std::string group_id;
  std::string reply_token;
};

// Fields a transition or update may set; unset members are left alone.
struct JobUpdate {
  std::optional<ImageRef> image;
  std::optional<Instant> start;
  std::optional<Instant> end;
  std::optional<std::string> reason;
  std::optional<detector::DetectionResponse> prediction;
  std::optional<std::vector<std::string>> reply_message_ids;
};

// Half-open [from_ms, to_ms) on job creation time; unset bounds are open.
struct Period {
  std::optional<std::int64_t> from_ms;
  std::optional<std::int64_t> to_ms;
};

struct JobFilter {
  Period period;
  std::optional<std::string> user_id;
  std::optional<JobStatus> status;
  std::optional<Verdict> verdict;  // jobs carrying feedback with this verdict
};

struct AuditEntry {
  std::int64_t timestamp_ms = 0;
  std::string user_id;
  std::string action;
  std::string detail;
};

struct DeploymentAtp {
  metrics::ATPReport report;
  std::vector<metrics::AtpSample> samples;
  std::int64_t jobs_considered = 0;
  std::int64_t included = 0;
  std::int64_t excluded_unverified = 0;
  std::int64_t excluded_non_target = 0;
  std::int64_t excluded_incomplete = 0;
  double excluded_percent = 0;
};

struct LatencySummary {
  std::int64_t count = 0;
  double min_ms = 0;
  double median_ms = 0;
  double p95_ms = 0;
  double max_ms = 0;
};

// Linear-interpolated percentile of sorted values, q in [0,1].
double percentile(const std::vector<double>& sorted, double q);

// "J42" or "j42" -> 42.
std::optional<std::int64_t> parse_job_ref(std::string_view ref);

class Store {
 public:
  // ":memory:" opens a private in-memory database.
  explicit Store(const std::string& path, ClassRegistry registry = ClassRegistry());
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const ClassRegistry& registry() const { return registry_; }

  void upsert_user(const UserRecord& user);
  std::optional<UserRecord> get_user(const std::string& user_id) const;
  std::vector<UserRecord> list_users() const;

  // Persists the event. Returns false, storing nothing, when an event with
  // the same message id was accepted within the dedup window.
  bool append_event(const EventRecord& event, std::int64_t now_ms = wall_clock_ms());
  std::int64_t event_count() const;

  // Returns nullopt when the message already owns a job.
  std::optional<JobRecord> create_job(const NewJob& job,
                                      std::int64_t now_ms = wall_clock_ms());
  // Throws UnknownJob, IllegalTransition, InvalidArgument (done without a
  // prediction).
  JobRecord transition_job(const std::string& job_id, JobStatus to,
                           const JobUpdate& update = {});
  // Non-status fields only. Throws UnknownJob.
  JobRecord update_job(const std::string& job_id, const JobUpdate& update);
  JobRecord get_job(const std::string& job_id) const;
  std::optional<JobRecord> find_job_by_message(const std::string& message_id) const;
  std::vector<JobRecord> list_jobs(const JobFilter& filter = {}) const;
  std::int64_t job_count() const;

  // Assigns feedback_id (and timestamp when zero). Throws InvalidArgument,
  // UnknownJob, DuplicateFeedback for a repeated (job, specialist, verdict).
  FeedbackRecord record_feedback(FeedbackRecord feedback);
  std::vector<FeedbackRecord> list_feedback(
      const std::optional<std::string>& job_id = std::nullopt) const;

  void append_audit(const AuditEntry& entry);
  std::vector<AuditEntry> audit_log() const;

  // Ground truth per job comes from its latest verdict: confirm keeps the
  // predicted set, wrong_class replaces it with the corrected class.
  // Unverified jobs are excluded when verified_only, otherwise treated as
  // confirmed.
  DeploymentAtp deployment_atp(const Period& period, bool verified_only = true) const;
  LatencySummary latency_report(const Period& period) const;

  // Line-delimited {"record": "user"|"job"|"feedback", ...}.
  void export_jsonl(std::ostream& out) const;
  // Replays an export into this store, keeping job and feedback ids.
  // Returns the number of records imported.
  std::int64_t import_jsonl(std::istream& in);

 private:
  JobRecord get_job_locked(std::int64_t seq) const;
  JobRecord apply_update_locked(std::int64_t seq, const JobRecord& current,
                                const JobUpdate& update,
                                std::optional<JobStatus> status);

  ClassRegistry registry_;
  mutable std::mutex mu_;
  sqlite3* db_ = nullptr;
};

}  // namespace ricebot::store
