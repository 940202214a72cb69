#include "ricebot/records.hpp"

#include <chrono>
#include <random>

namespace ricebot::store {

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::kQueued: return "queued";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
    case JobStatus::kSkippedNoReply: return "skipped_no_reply";
  }
  return "unknown";
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kWrongClass: return "wrong_class";
    case Verdict::kNotDisease: return "not_disease";
    case Verdict::kConfirm: return "confirm";
  }
  return "unknown";
}

std::string to_string(Role r) {
  switch (r) {
    case Role::kFarmer: return "farmer";
    case Role::kSpecialist: return "specialist";
    case Role::kAdmin: return "admin";
  }
  return "unknown";
}

JobStatus parse_job_status(std::string_view t) {
  if (t == "queued") return JobStatus::kQueued;
  if (t == "running") return JobStatus::kRunning;
  if (t == "done") return JobStatus::kDone;
  if (t == "failed") return JobStatus::kFailed;
  if (t == "skipped_no_reply") return JobStatus::kSkippedNoReply;
  throw InvalidArgument("unknown job status: " + std::string(t));
}

Verdict parse_verdict(std::string_view t) {
  if (t == "wrong_class") return Verdict::kWrongClass;
  if (t == "not_disease") return Verdict::kNotDisease;
  if (t == "confirm") return Verdict::kConfirm;
  throw InvalidArgument("unknown verdict: " + std::string(t));
}

Role parse_role(std::string_view t) {
  if (t == "farmer") return Role::kFarmer;
  if (t == "specialist") return Role::kSpecialist;
  if (t == "admin") return Role::kAdmin;
  throw InvalidArgument("unknown role: " + std::string(t));
}

bool is_legal_transition(JobStatus from, JobStatus to) {
  switch (from) {
    case JobStatus::kQueued:
      return to == JobStatus::kRunning || to == JobStatus::kFailed;
    case JobStatus::kRunning:
      return to == JobStatus::kDone || to == JobStatus::kFailed;
    case JobStatus::kDone:
      return to == JobStatus::kSkippedNoReply;
    case JobStatus::kFailed:
    case JobStatus::kSkippedNoReply:
      return false;
  }
  return false;
}

std::int64_t wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch())
      .count();
}

namespace {

const std::string& process_epoch() {
  static const std::string epoch = [] {
    std::random_device rd;
    std::uint64_t v = (std::uint64_t(rd()) << 32) ^ rd() ^
                      std::uint64_t(wall_clock_ms());
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    for (int i = 0; i < 16; ++i) s.push_back(kHex[(v >> (i * 4)) & 0xf]);
    return s;
  }();
  return epoch;
}

}  // namespace

Instant Instant::now() {
  using namespace std::chrono;
  return {wall_clock_ms(),
          duration_cast<milliseconds>(steady_clock::now().time_since_epoch())
              .count(),
          process_epoch()};
}

void FeedbackRecord::validate() const {
  if (job_id.empty()) throw InvalidArgument("feedback needs a job id");
  if (specialist_id.empty()) throw InvalidArgument("feedback needs a specialist id");
  if (verdict == Verdict::kWrongClass && !corrected_class)
    throw InvalidArgument("wrong_class feedback needs a corrected class");
  if (verdict != Verdict::kWrongClass && corrected_class)
    throw InvalidArgument("only wrong_class feedback carries a corrected class");
}

}  // namespace ricebot::store
