#pragma once

// In-process publish/subscribe link on simulated time. Topics are
// '/'-separated; subscription filters may use "+" for one whole segment.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "troublemaker/kinematics.hpp"
#include "troublemaker/rng.hpp"

namespace troublemaker {

std::string target_state_topic(int target_id);
std::string target_trajectory_topic(int target_id);
inline constexpr const char* kVutStateTopic = "vut/state";
inline constexpr const char* kSupervisorTopic = "supervisor/cmd";

struct Message {
  std::string topic;
  std::string payload;
  std::string publisher;
  double publish_ms = 0.0;
  double deliver_ms = 0.0;
  std::uint64_t seq = 0;  // per topic, starts at 1
};

struct LinkConfig {
  double base_latency_ms = 0.0;
  double jitter_ms = 0.0;  // uniform half-width
  double drop_probability = 0.0;
  std::uint64_t seed = 0;

  bool ideal() const { return base_latency_ms == 0.0 && jitter_ms == 0.0 && drop_probability == 0.0; }
  void validate() const;  // throws ConfigError
};

enum class LinkEventKind { kPublish, kDeliver, kDrop };
std::string to_string(LinkEventKind k);

struct LinkEvent {
  LinkEventKind kind;
  std::string topic;
  std::uint64_t seq;
  double publish_ms;
  double deliver_ms;  // NaN for drops
};

struct TopicCounters {
  std::size_t published = 0;
  std::size_t delivered = 0;
  std::size_t dropped = 0;
  std::size_t in_flight() const { return published - delivered - dropped; }
};

// Validates a filter: non-empty segments, "+" only as a whole segment.
bool valid_filter(const std::string& filter);
bool topic_matches(const std::string& filter, const std::string& topic);

using SubscriptionId = std::size_t;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::uint64_t publish(const std::string& topic, const std::string& payload, double now_ms,
                                const std::string& publisher = {}) = 0;
  virtual SubscriptionId subscribe(const std::string& filter) = 0;
  // Messages with deliver_ms <= now_ms, in delivery order.
  virtual std::vector<Message> poll(SubscriptionId id, double now_ms) = 0;
};

// Jittered, lossy broker. Delivery order is (deliver_ms, publish order);
// within one (topic, publisher) stream deliver times are clamped to be
// non-decreasing so the stream stays FIFO.
class Broker : public Transport {
 public:
  explicit Broker(LinkConfig cfg = {});

  std::uint64_t publish(const std::string& topic, const std::string& payload, double now_ms,
                        const std::string& publisher = {}) override;
  SubscriptionId subscribe(const std::string& filter) override;
  std::vector<Message> poll(SubscriptionId id, double now_ms) override;

  // Moves every message due by now_ms into subscriber inboxes.
  void advance(double now_ms);

  const std::vector<LinkEvent>& log() const { return log_; }
  std::map<std::string, TopicCounters> counters() const;
  const LinkConfig& config() const { return cfg_; }

 private:
  struct Pending {
    Message msg;
    std::uint64_t order;
    std::vector<SubscriptionId> targets;
  };
  struct Subscription {
    std::string filter;
    std::vector<Message> inbox;
  };

  void advance_locked(double now_ms);

  LinkConfig cfg_;
  Rng rng_;
  std::vector<Subscription> subs_;
  std::vector<Pending> pending_;
  std::map<std::string, std::uint64_t> seq_;
  std::map<std::pair<std::string, std::string>, double> last_deliver_;
  std::map<std::string, TopicCounters> counters_;
  std::vector<LinkEvent> log_;
  std::uint64_t order_ = 0;
  mutable std::mutex mu_;
};

// Synchronous mailbox: published messages land in matching inboxes at once.
class DirectTransport : public Transport {
 public:
  std::uint64_t publish(const std::string& topic, const std::string& payload, double now_ms,
                        const std::string& publisher = {}) override;
  SubscriptionId subscribe(const std::string& filter) override;
  std::vector<Message> poll(SubscriptionId id, double now_ms) override;

 private:
  std::vector<std::pair<std::string, std::vector<Message>>> subs_;
  std::map<std::string, std::uint64_t> seq_;
};

void write_link_log(const std::filesystem::path& path, const std::vector<LinkEvent>& log);

struct TelemetryFrame {
  std::string actor_id;
  double ts_ms = 0.0;
  double x_m = 0.0;
  double y_m = 0.0;
  double heading_rad = 0.0;
  double v_mps = 0.0;

  bool operator==(const TelemetryFrame&) const = default;
};

struct TrajectoryPoint {
  double s_m = 0.0;
  double sdot_mps = 0.0;
  double l_m = 0.0;
  double ldot_mps = 0.0;

  bool operator==(const TrajectoryPoint&) const = default;
};

struct TrajectoryCommand {
  double ts_ms = 0.0;
  int target_id = 0;
  double dt_s = 0.0;
  std::vector<TrajectoryPoint> points;

  bool operator==(const TrajectoryCommand&) const = default;
};

// Values go out rounded to 6 fractional digits, so decode(encode(x)) is
// exact for already-rounded inputs and encode is idempotent on decoded ones.
double wire_round(double v);
std::string encode_telemetry(const TelemetryFrame& f);
TelemetryFrame decode_telemetry(const std::string& payload);  // throws ParseError
std::string encode_trajectory(const TrajectoryCommand& c);    // throws InvalidStateError on non-finite
TrajectoryCommand decode_trajectory(const std::string& payload);

inline constexpr double kTelemetryPeriodMs = 50.0;

// Publishes frames at start_ms, start_ms + 50, ... strictly before
// start_ms + duration. Returns the frame count.
std::size_t telemetry_stream(const std::function<TelemetryFrame(double)>& source, Transport& link,
                             const std::string& topic, double duration_s, double start_ms = 0.0);

std::uint64_t dispatch_trajectory(Transport& link, const TrajectoryCommand& cmd, double now_ms);

}  // namespace troublemaker
