#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pbrl/envsim.hpp"
#include "pbrl/experience.hpp"

namespace pbrl::harness {

enum class Choice { first, second, equal, skip };

// Throws InputError for anything but first|second|equal|skip.
Choice parse_choice(std::string_view text);
std::string to_string(Choice choice);
// first -> (1,0), second -> (0,1), equal -> (0.5,0.5); skip has no label.
std::optional<experience::PreferenceLabel> label_for(Choice choice);

// Thread-safe hand-off between the training loop, which posts queries and
// waits, and label submitters (HTTP handlers, tests).
class HumanChannel {
 public:
  struct Pending {
    std::uint64_t id = 0;
    experience::SegmentPair pair;
  };
  struct Answer {
    std::uint64_t id = 0;
    Choice choice = Choice::skip;
  };
  struct Status {
    std::size_t pending = 0;
    std::size_t answered = 0;
    std::size_t labeled = 0;   // answers other than skip
    std::size_t skipped = 0;
    std::size_t expired = 0;
    std::size_t session = 0;
    std::size_t budget_used = 0;
    std::size_t budget = 0;
  };

  std::vector<std::uint64_t> post(std::vector<experience::SegmentPair> pairs);
  // Oldest unanswered query, if any.
  std::optional<Pending> next() const;
  // NotFoundError for unknown or expired ids, ConflictError for a second answer.
  void submit(std::uint64_t id, Choice choice);
  // Blocks until every id is answered or the timeout passes; ids still open
  // then expire. Answers come back in receipt order.
  std::vector<Answer> wait(const std::vector<std::uint64_t>& ids, std::chrono::milliseconds timeout);
  void set_progress(std::size_t session, std::size_t budget_used, std::size_t budget);
  Status status() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t next_id_ = 1;
  std::deque<Pending> pending_;
  std::map<std::uint64_t, Choice> answered_;
  std::vector<Answer> receipts_;
  std::map<std::uint64_t, bool> expired_;
  Status progress_;
};

inline constexpr const char* kTrajectorySchema = "trajectory v1";

// Rendering metadata for an environment (dimensions, grid layout).
nlohmann::json env_metadata(const envsim::Environment& env);
// `trajectory v1` payload for one pending query.
nlohmann::json query_payload(const HumanChannel::Pending& q, const nlohmann::json& env_meta,
                             const envsim::Environment* env);

// HTTP front for a HumanChannel:
//   GET  /queries/next        200 payload, or 204 with Retry-After
//   POST /queries/{id}/label  {"prefer": "first|second|equal|skip"}
//   GET  /status
class LabelingService {
 public:
  LabelingService(HumanChannel& channel, const envsim::Environment& env,
                  std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~LabelingService();
  LabelingService(const LabelingService&) = delete;
  LabelingService& operator=(const LabelingService&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  // Returns the bound port.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pbrl::harness
