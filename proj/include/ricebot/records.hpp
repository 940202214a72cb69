#pragma once

// Persistent record types of the logs database.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ricebot/detector.hpp"
#include "ricebot/domain.hpp"

namespace ricebot::store {

enum class JobStatus { kQueued, kRunning, kDone, kFailed, kSkippedNoReply };
enum class Verdict { kWrongClass, kNotDisease, kConfirm };
enum class Role { kFarmer, kSpecialist, kAdmin };

std::string to_string(JobStatus s);
std::string to_string(Verdict v);
std::string to_string(Role r);
// Throw InvalidArgument on unknown text.
JobStatus parse_job_status(std::string_view text);
Verdict parse_verdict(std::string_view text);
Role parse_role(std::string_view text);

// Forward-only lifecycle: queued -> running -> {done, failed}, queued ->
// failed, done -> skipped_no_reply.
bool is_legal_transition(JobStatus from, JobStatus to);

// A wall-clock reading paired with a monotonic one. The monotonic part is
// only comparable to readings taken within the same process (same epoch).
struct Instant {
  std::int64_t wall_ms = 0;
  std::int64_t mono_ms = 0;
  std::string epoch;

  static Instant now();
};

struct JobRecord {
  std::string job_id;      // short reference, e.g. "J42"
  std::string message_id;  // platform message id, unique per job
  std::string user_id;
  std::string group_id;
  std::string reply_token;
  std::optional<ImageRef> image;
  std::int64_t created_ms = 0;
  std::optional<std::int64_t> start_ms;
  std::optional<std::int64_t> end_ms;
  std::optional<double> duration_ms;
  JobStatus status = JobStatus::kQueued;
  std::string reason;
  // Detections that survived the reply threshold.
  std::optional<detector::DetectionResponse> prediction;
  std::vector<std::string> reply_message_ids;
};

struct FeedbackRecord {
  std::string feedback_id;
  std::string job_id;
  std::string specialist_id;
  Verdict verdict = Verdict::kConfirm;
  std::optional<DiseaseClass> corrected_class;
  std::string free_text;
  std::int64_t timestamp_ms = 0;

  // Throws InvalidArgument when wrong_class lacks a corrected class.
  void validate() const;
};

struct UserRecord {
  std::string user_id;
  Role role = Role::kFarmer;
  std::string display_name;
};

std::int64_t wall_clock_ms();

}  // namespace ricebot::store
