#include "ricebot/store.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>
#include <sqlite3.h>

namespace ricebot::store {

using nlohmann::json;

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS users(
  user_id TEXT PRIMARY KEY,
  role TEXT NOT NULL,
  display_name TEXT NOT NULL DEFAULT '');
CREATE TABLE IF NOT EXISTS events(
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  message_id TEXT, event_type TEXT, message_type TEXT, user_id TEXT,
  group_id TEXT, reply_token TEXT, platform_ts INTEGER, text TEXT,
  received_ms INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS seen_messages(
  message_id TEXT PRIMARY KEY,
  seen_ms INTEGER NOT NULL);
CREATE INDEX IF NOT EXISTS seen_messages_time ON seen_messages(seen_ms);
CREATE TABLE IF NOT EXISTS jobs(
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  message_id TEXT NOT NULL UNIQUE,
  user_id TEXT NOT NULL DEFAULT '',
  group_id TEXT NOT NULL DEFAULT '',
  reply_token TEXT NOT NULL DEFAULT '',
  image TEXT,
  created_ms INTEGER NOT NULL,
  start_ms INTEGER, start_mono_ms INTEGER, start_epoch TEXT,
  end_ms INTEGER, duration_ms REAL,
  status TEXT NOT NULL,
  reason TEXT NOT NULL DEFAULT '',
  prediction TEXT,
  reply_ids TEXT NOT NULL DEFAULT '[]');
CREATE INDEX IF NOT EXISTS jobs_created ON jobs(created_ms);
CREATE TABLE IF NOT EXISTS feedback(
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  job_seq INTEGER NOT NULL REFERENCES jobs(seq),
  specialist_id TEXT NOT NULL,
  verdict TEXT NOT NULL,
  corrected_class TEXT,
  free_text TEXT NOT NULL DEFAULT '',
  timestamp_ms INTEGER NOT NULL,
  UNIQUE(job_seq, specialist_id, verdict));
CREATE TABLE IF NOT EXISTS audit_log(
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  timestamp_ms INTEGER NOT NULL,
  user_id TEXT NOT NULL,
  action TEXT NOT NULL,
  detail TEXT NOT NULL);
)sql";

constexpr const char* kJobColumns =
    "seq, message_id, user_id, group_id, reply_token, image, created_ms, "
    "start_ms, end_ms, duration_ms, status, reason, prediction, reply_ids";

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
      throw StorageError(std::string("prepare failed: ") + sqlite3_errmsg(db));
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Stmt& bind(int i, double v) {
    check(sqlite3_bind_double(stmt_, i, v));
    return *this;
  }
  Stmt& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()),
                            SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind_null(int i) {
    check(sqlite3_bind_null(stmt_, i));
    return *this;
  }
  template <typename T>
  Stmt& bind(int i, const std::optional<T>& v) {
    return v ? bind(i, *v) : bind_null(i);
  }

  // True while rows remain.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    if (rc == SQLITE_CONSTRAINT)
      throw ConstraintViolation(sqlite3_errmsg(db_));
    throw StorageError(std::string("step failed: ") + sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }

  bool is_null(int c) const { return sqlite3_column_type(stmt_, c) == SQLITE_NULL; }
  std::int64_t i64(int c) const { return sqlite3_column_int64(stmt_, c); }
  double f64(int c) const { return sqlite3_column_double(stmt_, c); }
  std::string text(int c) const {
    const auto* p = sqlite3_column_text(stmt_, c);
    return p ? std::string(reinterpret_cast<const char*>(p),
                           sqlite3_column_bytes(stmt_, c))
             : std::string();
  }
  std::optional<std::int64_t> opt_i64(int c) const {
    return is_null(c) ? std::nullopt : std::optional(i64(c));
  }

  struct ConstraintViolation : StorageError {
    using StorageError::StorageError;
  };

 private:
  void check(int rc) {
    if (rc != SQLITE_OK)
      throw StorageError(std::string("bind failed: ") + sqlite3_errmsg(db_));
  }
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw StorageError("sqlite: " + msg);
  }
}

// BEGIN IMMEDIATE ... COMMIT, rolled back unless committed.
class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { exec(db_, "BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    exec(db_, "COMMIT");
    done_ = true;
  }

 private:
  sqlite3* db_;
  bool done_ = false;
};

std::string job_ref(std::int64_t seq) { return "J" + std::to_string(seq); }

std::int64_t require_seq(const std::string& job_id) {
  if (auto seq = parse_job_ref(job_id)) return *seq;
  throw UnknownJob(job_id);
}

json image_to_json(const ImageRef& i) {
  return {{"id", i.id},
          {"content_hash", i.content_hash},
          {"width", i.width},
          {"height", i.height},
          {"storage_path", i.storage_path}};
}

ImageRef image_from_json(const json& j) {
  return {j.at("id").get<std::string>(), j.at("content_hash").get<std::string>(),
          j.at("width").get<int>(), j.at("height").get<int>(),
          j.at("storage_path").get<std::string>()};
}

detector::DetectionResponse prediction_from_json(const json& j,
                                                 const ClassRegistry& registry) {
  detector::DetectionResponse r;
  r.model_version = j.value("model_version", std::string());
  r.backend_latency_ms = j.value("latency_ms", 0.0);
  for (const auto& d : j.at("detections")) {
    const detector::RawDetection raw = detector::raw_detection_from_json(d, registry);
    r.detections.emplace_back(BoundingBox(raw.box), raw.cls, raw.confidence);
  }
  return r;
}

JobRecord read_job(const Stmt& s, const ClassRegistry& registry) {
  JobRecord j;
  j.job_id = job_ref(s.i64(0));
  j.message_id = s.text(1);
  j.user_id = s.text(2);
  j.group_id = s.text(3);
  j.reply_token = s.text(4);
  if (!s.is_null(5)) j.image = image_from_json(json::parse(s.text(5)));
  j.created_ms = s.i64(6);
  j.start_ms = s.opt_i64(7);
  j.end_ms = s.opt_i64(8);
  if (!s.is_null(9)) j.duration_ms = s.f64(9);
  j.status = parse_job_status(s.text(10));
  j.reason = s.text(11);
  if (!s.is_null(12))
    j.prediction = prediction_from_json(json::parse(s.text(12)), registry);
  j.reply_message_ids = json::parse(s.text(13)).get<std::vector<std::string>>();
  return j;
}

FeedbackRecord read_feedback(const Stmt& s, const ClassRegistry& registry) {
  FeedbackRecord f;
  f.feedback_id = "F" + std::to_string(s.i64(0));
  f.job_id = job_ref(s.i64(1));
  f.specialist_id = s.text(2);
  f.verdict = parse_verdict(s.text(3));
  if (!s.is_null(4)) f.corrected_class = registry.at(s.text(4));
  f.free_text = s.text(5);
  f.timestamp_ms = s.i64(6);
  return f;
}

constexpr const char* kFeedbackColumns =
    "seq, job_seq, specialist_id, verdict, corrected_class, free_text, "
    "timestamp_ms";

void add_period(std::string& sql, const Period& p, const char* column) {
  if (p.from_ms) sql += std::string(" AND ") + column + " >= " + std::to_string(*p.from_ms);
  if (p.to_ms) sql += std::string(" AND ") + column + " < " + std::to_string(*p.to_ms);
}

}  // namespace

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  const double pos = std::clamp(q, 0.0, 1.0) * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - double(lo));
}

std::optional<std::int64_t> parse_job_ref(std::string_view ref) {
  if (ref.size() < 2 || (ref[0] != 'J' && ref[0] != 'j') || ref.size() > 19)
    return std::nullopt;
  std::int64_t v = 0;
  for (char c : ref.substr(1)) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return v;
}

Store::Store(const std::string& path, ClassRegistry registry)
    : registry_(std::move(registry)) {
  if (sqlite3_open_v2(path.c_str(), &db_,
                      SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE |
                          SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw StorageError("cannot open store " + path + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  if (path != ":memory:") exec(db_, "PRAGMA journal_mode=WAL");
  exec(db_, "PRAGMA synchronous=FULL; PRAGMA foreign_keys=ON;");
  exec(db_, kSchema);
}

Store::~Store() { sqlite3_close(db_); }

// --- users -------------------------------------------------------------------

void Store::upsert_user(const UserRecord& user) {
  if (user.user_id.empty()) throw InvalidArgument("user id must not be empty");
  std::lock_guard lock(mu_);
  Stmt(db_,
       "INSERT INTO users(user_id, role, display_name) VALUES(?,?,?) "
       "ON CONFLICT(user_id) DO UPDATE SET role=excluded.role, "
       "display_name=excluded.display_name")
      .bind(1, user.user_id)
      .bind(2, to_string(user.role))
      .bind(3, user.display_name)
      .run();
}

std::optional<UserRecord> Store::get_user(const std::string& user_id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT user_id, role, display_name FROM users WHERE user_id=?");
  s.bind(1, user_id);
  if (!s.step()) return std::nullopt;
  return UserRecord{s.text(0), parse_role(s.text(1)), s.text(2)};
}

std::vector<UserRecord> Store::list_users() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT user_id, role, display_name FROM users ORDER BY user_id");
  std::vector<UserRecord> out;
  while (s.step()) out.push_back({s.text(0), parse_role(s.text(1)), s.text(2)});
  return out;
}

// --- events ------------------------------------------------------------------

bool Store::append_event(const EventRecord& e, std::int64_t now_ms) {
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  if (!e.message_id.empty()) {
    Stmt(db_, "DELETE FROM seen_messages WHERE seen_ms < ?")
        .bind(1, now_ms - kDedupWindowMs)
        .run();
    Stmt ins(db_, "INSERT OR IGNORE INTO seen_messages(message_id, seen_ms) VALUES(?,?)");
    ins.bind(1, e.message_id).bind(2, now_ms).run();
    if (sqlite3_changes(db_) == 0) return false;
  }
  Stmt(db_,
       "INSERT INTO events(message_id, event_type, message_type, user_id, "
       "group_id, reply_token, platform_ts, text, received_ms) "
       "VALUES(?,?,?,?,?,?,?,?,?)")
      .bind(1, e.message_id)
      .bind(2, e.event_type)
      .bind(3, e.message_type)
      .bind(4, e.user_id)
      .bind(5, e.group_id)
      .bind(6, e.reply_token)
      .bind(7, e.platform_ts)
      .bind(8, e.text)
      .bind(9, now_ms)
      .run();
  tx.commit();
  return true;
}

std::int64_t Store::event_count() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT COUNT(*) FROM events");
  s.step();
  return s.i64(0);
}

// --- jobs --------------------------------------------------------------------

std::optional<JobRecord> Store::create_job(const NewJob& job, std::int64_t now_ms) {
  if (job.message_id.empty()) throw InvalidArgument("job needs a message id");
  std::lock_guard lock(mu_);
  // Look first: an ignored insert would still use up a sequence number and
  // leave a gap in the job references.
  Transaction tx(db_);
  {
    Stmt q(db_, "SELECT 1 FROM jobs WHERE message_id=?");
    q.bind(1, job.message_id);
    if (q.step()) return std::nullopt;
  }
  Stmt s(db_,
         "INSERT INTO jobs(message_id, user_id, group_id, reply_token, "
         "created_ms, status) VALUES(?,?,?,?,?,?)");
  s.bind(1, job.message_id)
      .bind(2, job.user_id)
      .bind(3, job.group_id)
      .bind(4, job.reply_token)
      .bind(5, now_ms)
      .bind(6, to_string(JobStatus::kQueued))
      .run();
  JobRecord created = get_job_locked(sqlite3_last_insert_rowid(db_));
  tx.commit();
  return created;
}

JobRecord Store::get_job_locked(std::int64_t seq) const {
  Stmt s(db_, (std::string("SELECT ") + kJobColumns + " FROM jobs WHERE seq=?").c_str());
  s.bind(1, seq);
  if (!s.step()) throw UnknownJob(job_ref(seq));
  return read_job(s, registry_);
}

JobRecord Store::get_job(const std::string& job_id) const {
  const std::int64_t seq = require_seq(job_id);
  std::lock_guard lock(mu_);
  return get_job_locked(seq);
}

std::optional<JobRecord> Store::find_job_by_message(const std::string& message_id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, (std::string("SELECT ") + kJobColumns + " FROM jobs WHERE message_id=?").c_str());
  s.bind(1, message_id);
  if (!s.step()) return std::nullopt;
  return read_job(s, registry_);
}

JobRecord Store::apply_update_locked(std::int64_t seq, const JobRecord& current,
                                     const JobUpdate& u,
                                     std::optional<JobStatus> status) {
  if (u.image) {
    Stmt(db_, "UPDATE jobs SET image=? WHERE seq=?")
        .bind(1, image_to_json(*u.image).dump())
        .bind(2, seq)
        .run();
  }
  if (u.start) {
    Stmt(db_, "UPDATE jobs SET start_ms=?, start_mono_ms=?, start_epoch=? WHERE seq=?")
        .bind(1, u.start->wall_ms)
        .bind(2, u.start->mono_ms)
        .bind(3, u.start->epoch)
        .bind(4, seq)
        .run();
  }
  if (u.end) {
    Stmt s(db_, "SELECT start_ms, start_mono_ms, start_epoch FROM jobs WHERE seq=?");
    s.bind(1, seq);
    s.step();
    if (s.is_null(0))
      throw InvalidArgument("job " + current.job_id + " has no start time");
    const std::int64_t start_wall = s.i64(0);
    // Monotonic difference when both readings come from this process; the
    // wall clock otherwise.
    double duration = 0;
    if (!s.is_null(1) && s.text(2) == u.end->epoch)
      duration = double(u.end->mono_ms - s.i64(1));
    else
      duration = double(u.end->wall_ms - start_wall);
    duration = std::max(0.0, duration);
    const std::int64_t end_wall = std::max(u.end->wall_ms, start_wall);
    Stmt(db_, "UPDATE jobs SET end_ms=?, duration_ms=? WHERE seq=?")
        .bind(1, end_wall)
        .bind(2, duration)
        .bind(3, seq)
        .run();
  }
  if (u.reason) {
    Stmt(db_, "UPDATE jobs SET reason=? WHERE seq=?").bind(1, *u.reason).bind(2, seq).run();
  }
  if (u.prediction) {
    Stmt(db_, "UPDATE jobs SET prediction=? WHERE seq=?")
        .bind(1, detector::response_to_json(*u.prediction).dump())
        .bind(2, seq)
        .run();
  }
  if (u.reply_message_ids) {
    Stmt(db_, "UPDATE jobs SET reply_ids=? WHERE seq=?")
        .bind(1, json(*u.reply_message_ids).dump())
        .bind(2, seq)
        .run();
  }
  if (status) {
    Stmt(db_, "UPDATE jobs SET status=? WHERE seq=?")
        .bind(1, to_string(*status))
        .bind(2, seq)
        .run();
  }
  return get_job_locked(seq);
}

JobRecord Store::transition_job(const std::string& job_id, JobStatus to,
                                const JobUpdate& update) {
  const std::int64_t seq = require_seq(job_id);
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  const JobRecord current = get_job_locked(seq);
  if (!is_legal_transition(current.status, to))
    throw IllegalTransition("job " + job_id + ": " + to_string(current.status) +
                            " -> " + to_string(to) + " is not allowed");
  if (to == JobStatus::kDone && !update.prediction && !current.prediction)
    throw InvalidArgument("job " + job_id + " cannot be done without a prediction");
  JobRecord out = apply_update_locked(seq, current, update, to);
  tx.commit();
  return out;
}

JobRecord Store::update_job(const std::string& job_id, const JobUpdate& update) {
  const std::int64_t seq = require_seq(job_id);
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  const JobRecord current = get_job_locked(seq);
  JobRecord out = apply_update_locked(seq, current, update, std::nullopt);
  tx.commit();
  return out;
}

std::vector<JobRecord> Store::list_jobs(const JobFilter& f) const {
  std::string sql = std::string("SELECT ") + kJobColumns + " FROM jobs WHERE 1=1";
  add_period(sql, f.period, "created_ms");
  if (f.user_id) sql += " AND user_id = ?1";
  if (f.status) sql += " AND status = ?2";
  if (f.verdict)
    sql += " AND EXISTS(SELECT 1 FROM feedback WHERE feedback.job_seq = jobs.seq "
           "AND feedback.verdict = ?3)";
  sql += " ORDER BY seq";
  std::lock_guard lock(mu_);
  Stmt s(db_, sql.c_str());
  if (f.user_id) s.bind(1, *f.user_id);
  if (f.status) s.bind(2, to_string(*f.status));
  if (f.verdict) s.bind(3, to_string(*f.verdict));
  std::vector<JobRecord> out;
  while (s.step()) out.push_back(read_job(s, registry_));
  return out;
}

std::int64_t Store::job_count() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT COUNT(*) FROM jobs");
  s.step();
  return s.i64(0);
}

// --- feedback ------------------------------------------------------------------

FeedbackRecord Store::record_feedback(FeedbackRecord f) {
  f.validate();
  const std::int64_t seq = require_seq(f.job_id);
  if (f.corrected_class) f.corrected_class = registry_.at(f.corrected_class->name);
  if (f.timestamp_ms == 0) f.timestamp_ms = wall_clock_ms();
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  get_job_locked(seq);  // UnknownJob
  Stmt s(db_, "INSERT INTO feedback(job_seq, specialist_id, verdict, corrected_class, "
              "free_text, timestamp_ms) VALUES(?,?,?,?,?,?)");
  s.bind(1, seq)
      .bind(2, f.specialist_id)
      .bind(3, to_string(f.verdict))
      .bind(5, f.free_text)
      .bind(6, f.timestamp_ms);
  if (f.corrected_class)
    s.bind(4, f.corrected_class->name);
  else
    s.bind_null(4);
  try {
    s.run();
  } catch (const Stmt::ConstraintViolation&) {
    throw DuplicateFeedback("feedback (" + f.job_id + ", " + f.specialist_id + ", " +
                            to_string(f.verdict) + ") already recorded");
  }
  f.feedback_id = "F" + std::to_string(sqlite3_last_insert_rowid(db_));
  tx.commit();
  return f;
}

std::vector<FeedbackRecord> Store::list_feedback(
    const std::optional<std::string>& job_id) const {
  std::string sql = std::string("SELECT ") + kFeedbackColumns + " FROM feedback";
  std::optional<std::int64_t> seq;
  if (job_id) {
    seq = parse_job_ref(*job_id);
    if (!seq) return {};
    sql += " WHERE job_seq = ?";
  }
  sql += " ORDER BY timestamp_ms, seq";
  std::lock_guard lock(mu_);
  Stmt s(db_, sql.c_str());
  if (seq) s.bind(1, *seq);
  std::vector<FeedbackRecord> out;
  while (s.step()) out.push_back(read_feedback(s, registry_));
  return out;
}

// --- audit -------------------------------------------------------------------

void Store::append_audit(const AuditEntry& e) {
  std::lock_guard lock(mu_);
  Stmt(db_, "INSERT INTO audit_log(timestamp_ms, user_id, action, detail) VALUES(?,?,?,?)")
      .bind(1, e.timestamp_ms ? e.timestamp_ms : wall_clock_ms())
      .bind(2, e.user_id)
      .bind(3, e.action)
      .bind(4, e.detail)
      .run();
}

std::vector<AuditEntry> Store::audit_log() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT timestamp_ms, user_id, action, detail FROM audit_log ORDER BY id");
  std::vector<AuditEntry> out;
  while (s.step()) out.push_back({s.i64(0), s.text(1), s.text(2), s.text(3)});
  return out;
}

// --- reports -------------------------------------------------------------------

DeploymentAtp Store::deployment_atp(const Period& period, bool verified_only) const {
  std::vector<JobRecord> jobs;
  std::map<std::string, FeedbackRecord> latest;  // job id -> latest verdict
  {
    std::lock_guard lock(mu_);
    Transaction snapshot(db_);
    std::string sql = std::string("SELECT ") + kJobColumns + " FROM jobs WHERE 1=1";
    add_period(sql, period, "created_ms");
    sql += " ORDER BY seq";
    Stmt js(db_, sql.c_str());
    while (js.step()) jobs.push_back(read_job(js, registry_));
    Stmt fs(db_, (std::string("SELECT ") + kFeedbackColumns +
                  " FROM feedback ORDER BY timestamp_ms, seq")
                     .c_str());
    while (fs.step()) {
      FeedbackRecord f = read_feedback(fs, registry_);
      latest[f.job_id] = std::move(f);
    }
  }

  DeploymentAtp out;
  for (const auto& job : jobs) {
    ++out.jobs_considered;
    if (job.status != JobStatus::kDone && job.status != JobStatus::kSkippedNoReply) {
      ++out.excluded_incomplete;
      continue;
    }
    const ClassSet pred =
        job.prediction ? classes_of(job.prediction->detections) : ClassSet{};
    const auto fb = latest.find(job.job_id);
    std::optional<Verdict> verdict;
    if (fb != latest.end()) verdict = fb->second.verdict;
    else if (!verified_only && !pred.empty()) verdict = Verdict::kConfirm;

    if (!verdict) {
      ++out.excluded_unverified;
      continue;
    }
    metrics::AtpSample sample;
    switch (*verdict) {
      case Verdict::kNotDisease:
        ++out.excluded_non_target;
        continue;
      case Verdict::kConfirm:
        if (pred.empty()) {
          // Confirmed silence: a non-target image.
          ++out.excluded_non_target;
          continue;
        }
        sample = {pred, pred};
        break;
      case Verdict::kWrongClass:
        sample = {ClassSet{*fb->second.corrected_class}, pred};
        break;
    }
    out.samples.push_back(std::move(sample));
    ++out.included;
  }
  out.report = metrics::atp_report(out.samples);
  if (out.jobs_considered > 0)
    out.excluded_percent =
        100.0 * double(out.jobs_considered - out.included) / double(out.jobs_considered);
  return out;
}

LatencySummary Store::latency_report(const Period& period) const {
  std::string sql = "SELECT duration_ms FROM jobs WHERE duration_ms IS NOT NULL";
  add_period(sql, period, "created_ms");
  std::vector<double> values;
  {
    std::lock_guard lock(mu_);
    Stmt s(db_, sql.c_str());
    while (s.step()) values.push_back(s.f64(0));
  }
  LatencySummary out;
  out.count = static_cast<std::int64_t>(values.size());
  if (values.empty()) return out;
  std::sort(values.begin(), values.end());
  out.min_ms = values.front();
  out.max_ms = values.back();
  out.median_ms = percentile(values, 0.5);
  out.p95_ms = percentile(values, 0.95);
  return out;
}

// --- export / import -------------------------------------------------------------

void Store::export_jsonl(std::ostream& out) const {
  for (const auto& u : list_users())
    out << json{{"record", "user"},
                {"user_id", u.user_id},
                {"role", to_string(u.role)},
                {"display_name", u.display_name}}
               .dump()
        << '\n';
  for (const auto& j : list_jobs()) {
    json r = {{"record", "job"},
              {"job_id", j.job_id},
              {"message_id", j.message_id},
              {"user_id", j.user_id},
              {"group_id", j.group_id},
              {"reply_token", j.reply_token},
              {"created_ms", j.created_ms},
              {"status", to_string(j.status)},
              {"reason", j.reason},
              {"reply_message_ids", j.reply_message_ids}};
    r["image"] = j.image ? image_to_json(*j.image) : json();
    r["start_ms"] = j.start_ms ? json(*j.start_ms) : json();
    r["end_ms"] = j.end_ms ? json(*j.end_ms) : json();
    r["duration_ms"] = j.duration_ms ? json(*j.duration_ms) : json();
    r["prediction"] = j.prediction ? detector::response_to_json(*j.prediction) : json();
    out << r.dump() << '\n';
  }
  for (const auto& f : list_feedback())
    out << json{{"record", "feedback"},
                {"feedback_id", f.feedback_id},
                {"job_id", f.job_id},
                {"specialist_id", f.specialist_id},
                {"verdict", to_string(f.verdict)},
                {"corrected_class",
                 f.corrected_class ? json(f.corrected_class->name) : json()},
                {"free_text", f.free_text},
                {"timestamp_ms", f.timestamp_ms}}
               .dump()
        << '\n';
}

std::int64_t Store::import_jsonl(std::istream& in) {
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  std::string line;
  std::size_t line_no = 0;
  std::int64_t n = 0;
  auto opt_int = [](const json& j, const char* key) -> std::optional<std::int64_t> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::int64_t>();
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json r = json::parse(line);
      const std::string kind = r.at("record").get<std::string>();
      if (kind == "user") {
        Stmt(db_, "INSERT OR REPLACE INTO users(user_id, role, display_name) VALUES(?,?,?)")
            .bind(1, r.at("user_id").get<std::string>())
            .bind(2, to_string(parse_role(r.at("role").get<std::string>())))
            .bind(3, r.value("display_name", std::string()))
            .run();
      } else if (kind == "job") {
        const std::string id = r.at("job_id").get<std::string>();
        const auto seq = parse_job_ref(id);
        if (!seq) throw InvalidArgument("bad job id " + id);
        const json& pred = r.at("prediction");
        if (!pred.is_null()) prediction_from_json(pred, registry_);  // validate
        Stmt s(db_,
               "INSERT INTO jobs(seq, message_id, user_id, group_id, reply_token, image, "
               "created_ms, start_ms, end_ms, duration_ms, status, reason, prediction, "
               "reply_ids) VALUES(?,?,?,?,?,?,?,?,?,?,?,?,?,?)");
        s.bind(1, *seq)
            .bind(2, r.at("message_id").get<std::string>())
            .bind(3, r.value("user_id", std::string()))
            .bind(4, r.value("group_id", std::string()))
            .bind(5, r.value("reply_token", std::string()))
            .bind(7, r.at("created_ms").get<std::int64_t>())
            .bind(8, opt_int(r, "start_ms"))
            .bind(9, opt_int(r, "end_ms"))
            .bind(11, to_string(parse_job_status(r.at("status").get<std::string>())))
            .bind(12, r.value("reason", std::string()))
            .bind(14, r.value("reply_message_ids", json::array()).dump());
        if (r.contains("image") && !r.at("image").is_null())
          s.bind(6, image_to_json(image_from_json(r.at("image"))).dump());
        else
          s.bind_null(6);
        if (r.contains("duration_ms") && !r.at("duration_ms").is_null())
          s.bind(10, r.at("duration_ms").get<double>());
        else
          s.bind_null(10);
        if (!pred.is_null())
          s.bind(13, pred.dump());
        else
          s.bind_null(13);
        s.run();
      } else if (kind == "feedback") {
        FeedbackRecord f;
        f.job_id = r.at("job_id").get<std::string>();
        f.specialist_id = r.at("specialist_id").get<std::string>();
        f.verdict = parse_verdict(r.at("verdict").get<std::string>());
        if (r.contains("corrected_class") && !r.at("corrected_class").is_null())
          f.corrected_class = registry_.at(r.at("corrected_class").get<std::string>());
        f.free_text = r.value("free_text", std::string());
        f.timestamp_ms = r.at("timestamp_ms").get<std::int64_t>();
        f.validate();
        const auto job_seq = parse_job_ref(f.job_id);
        if (!job_seq) throw InvalidArgument("bad job id " + f.job_id);
        const auto fid = r.value("feedback_id", std::string());
        Stmt s(db_, "INSERT INTO feedback(seq, job_seq, specialist_id, verdict, "
                    "corrected_class, free_text, timestamp_ms) VALUES(?,?,?,?,?,?,?)");
        if (fid.size() > 1 && fid[0] == 'F')
          s.bind(1, static_cast<std::int64_t>(std::stoll(fid.substr(1))));
        else
          s.bind_null(1);
        s.bind(2, *job_seq)
            .bind(3, f.specialist_id)
            .bind(4, to_string(f.verdict))
            .bind(6, f.free_text)
            .bind(7, f.timestamp_ms);
        if (f.corrected_class)
          s.bind(5, f.corrected_class->name);
        else
          s.bind_null(5);
        s.run();
      } else {
        throw InvalidArgument("unknown record kind " + kind);
      }
      ++n;
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const InvalidArgument& e) {
      throw ParseError(line_no, e.what());
    } catch (const UnknownClass& e) {
      throw ParseError(line_no, e.what());
    } catch (const StorageError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  tx.commit();
  return n;
}

}  // namespace ricebot::store
