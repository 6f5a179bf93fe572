#include "troublemaker/cloudlink.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "troublemaker/errors.hpp"
#include "troublemaker/textio.hpp"

namespace troublemaker {

using nlohmann::json;

std::string target_state_topic(int target_id) { return "target/" + std::to_string(target_id) + "/state"; }

std::string target_trajectory_topic(int target_id) {
  return "target/" + std::to_string(target_id) + "/cmd/trajectory";
}

void LinkConfig::validate() const {
  if (!(base_latency_ms >= 0.0) || !std::isfinite(base_latency_ms)) {
    throw ConfigError("link latency must be a finite non-negative value");
  }
  if (!(jitter_ms >= 0.0) || !std::isfinite(jitter_ms)) throw ConfigError("link jitter must be non-negative");
  if (!(drop_probability >= 0.0 && drop_probability < 1.0)) {
    throw ConfigError("drop probability must lie in [0, 1)");
  }
}

std::string to_string(LinkEventKind k) {
  switch (k) {
    case LinkEventKind::kPublish:
      return "publish";
    case LinkEventKind::kDeliver:
      return "deliver";
    case LinkEventKind::kDrop:
      return "drop";
  }
  return "?";
}

bool valid_filter(const std::string& filter) {
  if (filter.empty()) return false;
  for (const auto& seg : split(filter, '/')) {
    if (seg.empty()) return false;
    if (seg.find('#') != std::string::npos) return false;
    if (seg.find('+') != std::string::npos && seg != "+") return false;
  }
  return true;
}

bool topic_matches(const std::string& filter, const std::string& topic) {
  const auto f = split(filter, '/');
  const auto t = split(topic, '/');
  if (f.size() != t.size()) return false;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] != "+" && f[i] != t[i]) return false;
  }
  return true;
}

namespace {

void check_topic(const std::string& topic) {
  if (topic.empty()) throw ConfigError("topic must be non-empty");
  if (topic.find('+') != std::string::npos || topic.find('#') != std::string::npos) {
    throw ConfigError("wildcards are not allowed in published topics: " + topic);
  }
}

}  // namespace

Broker::Broker(LinkConfig cfg) : cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

std::uint64_t Broker::publish(const std::string& topic, const std::string& payload, double now_ms,
                              const std::string& publisher) {
  check_topic(topic);
  std::lock_guard lock(mu_);
  advance_locked(now_ms);
  const std::uint64_t seq = ++seq_[topic];
  auto& ctr = counters_[topic];
  ++ctr.published;
  log_.push_back({LinkEventKind::kPublish, topic, seq, now_ms, std::numeric_limits<double>::quiet_NaN()});

  // Both draws happen for every message so the random stream does not
  // depend on which messages were dropped.
  const double u_drop = rng_.uniform();
  const double u_jit = rng_.uniform();
  if (u_drop < cfg_.drop_probability) {
    ++ctr.dropped;
    log_.push_back({LinkEventKind::kDrop, topic, seq, now_ms, std::numeric_limits<double>::quiet_NaN()});
    return seq;
  }
  double deliver = now_ms + cfg_.base_latency_ms + cfg_.jitter_ms * (2.0 * u_jit - 1.0);
  deliver = std::max(deliver, now_ms);
  auto key = std::make_pair(topic, publisher);
  if (auto it = last_deliver_.find(key); it != last_deliver_.end()) deliver = std::max(deliver, it->second);
  last_deliver_[key] = deliver;

  Pending p{{topic, payload, publisher, now_ms, deliver, seq}, order_++, {}};
  for (SubscriptionId i = 0; i < subs_.size(); ++i) {
    if (topic_matches(subs_[i].filter, topic)) p.targets.push_back(i);
  }
  pending_.push_back(std::move(p));
  // Zero-latency messages are due immediately.
  advance_locked(now_ms);
  return seq;
}

SubscriptionId Broker::subscribe(const std::string& filter) {
  if (!valid_filter(filter)) throw ConfigError("malformed topic filter: '" + filter + "'");
  std::lock_guard lock(mu_);
  subs_.push_back({filter, {}});
  return subs_.size() - 1;
}

void Broker::advance(double now_ms) {
  std::lock_guard lock(mu_);
  advance_locked(now_ms);
}

void Broker::advance_locked(double now_ms) {
  std::vector<Pending> due;
  auto split_at = std::stable_partition(pending_.begin(), pending_.end(),
                                        [&](const Pending& p) { return p.msg.deliver_ms > now_ms; });
  due.assign(std::make_move_iterator(split_at), std::make_move_iterator(pending_.end()));
  pending_.erase(split_at, pending_.end());
  std::sort(due.begin(), due.end(), [](const Pending& a, const Pending& b) {
    if (a.msg.deliver_ms != b.msg.deliver_ms) return a.msg.deliver_ms < b.msg.deliver_ms;
    return a.order < b.order;
  });
  for (auto& p : due) {
    ++counters_[p.msg.topic].delivered;
    log_.push_back({LinkEventKind::kDeliver, p.msg.topic, p.msg.seq, p.msg.publish_ms, p.msg.deliver_ms});
    for (SubscriptionId id : p.targets) subs_[id].inbox.push_back(p.msg);
  }
}

std::vector<Message> Broker::poll(SubscriptionId id, double now_ms) {
  std::lock_guard lock(mu_);
  if (id >= subs_.size()) throw OutOfRangeError("unknown subscription");
  advance_locked(now_ms);
  std::vector<Message> out;
  out.swap(subs_[id].inbox);
  return out;
}

std::map<std::string, TopicCounters> Broker::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

std::uint64_t DirectTransport::publish(const std::string& topic, const std::string& payload, double now_ms,
                                       const std::string& publisher) {
  check_topic(topic);
  const std::uint64_t seq = ++seq_[topic];
  for (auto& [filter, inbox] : subs_) {
    if (topic_matches(filter, topic)) inbox.push_back({topic, payload, publisher, now_ms, now_ms, seq});
  }
  return seq;
}

SubscriptionId DirectTransport::subscribe(const std::string& filter) {
  if (!valid_filter(filter)) throw ConfigError("malformed topic filter: '" + filter + "'");
  subs_.push_back({filter, {}});
  return subs_.size() - 1;
}

std::vector<Message> DirectTransport::poll(SubscriptionId id, double) {
  if (id >= subs_.size()) throw OutOfRangeError("unknown subscription");
  std::vector<Message> out;
  out.swap(subs_[id].second);
  return out;
}

void write_link_log(const std::filesystem::path& path, const std::vector<LinkEvent>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "event_kind\ttopic\tseq\tpublish_ms\tdeliver_ms\n";
  for (const auto& e : log) {
    out << to_string(e.kind) << '\t' << e.topic << '\t' << e.seq << '\t' << format_short(e.publish_ms) << '\t'
        << (std::isnan(e.deliver_ms) ? std::string("-") : format_short(e.deliver_ms)) << '\n';
  }
}

double wire_round(double v) { return *parse_double(format_short(v)); }

namespace {

std::string num(double v, const char* field) {
  if (!std::isfinite(v)) throw InvalidStateError(std::string("non-finite value in field ") + field);
  return format_short(v);
}

json parse_object(const std::string& payload) {
  try {
    auto j = json::parse(payload);
    if (!j.is_object()) throw ParseError("payload is not an object", 0);
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), e.byte == 0 ? 0 : e.byte - 1);
  }
}

template <typename T>
T field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(std::string("missing field ") + name, 0);
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("bad value for field ") + name, 0);
  }
}

}  // namespace

std::string encode_telemetry(const TelemetryFrame& f) {
  std::string s = "{\"ts_ms\":" + num(f.ts_ms, "ts_ms");
  s += ",\"actor_id\":" + json(f.actor_id).dump();
  s += ",\"x_m\":" + num(f.x_m, "x_m");
  s += ",\"y_m\":" + num(f.y_m, "y_m");
  s += ",\"heading_rad\":" + num(f.heading_rad, "heading_rad");
  s += ",\"v_mps\":" + num(f.v_mps, "v_mps") + "}";
  return s;
}

TelemetryFrame decode_telemetry(const std::string& payload) {
  const auto j = parse_object(payload);
  TelemetryFrame f;
  f.ts_ms = field<double>(j, "ts_ms");
  f.actor_id = field<std::string>(j, "actor_id");
  f.x_m = field<double>(j, "x_m");
  f.y_m = field<double>(j, "y_m");
  f.heading_rad = field<double>(j, "heading_rad");
  f.v_mps = field<double>(j, "v_mps");
  return f;
}

std::string encode_trajectory(const TrajectoryCommand& c) {
  std::string s = "{\"ts_ms\":" + num(c.ts_ms, "ts_ms");
  s += ",\"target_id\":" + std::to_string(c.target_id);
  s += ",\"dt_s\":" + num(c.dt_s, "dt_s");
  s += ",\"points\":[";
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    const auto& p = c.points[i];
    if (i) s += ",";
    s += "{\"s_m\":" + num(p.s_m, "s_m") + ",\"sdot_mps\":" + num(p.sdot_mps, "sdot_mps") +
         ",\"l_m\":" + num(p.l_m, "l_m") + ",\"ldot_mps\":" + num(p.ldot_mps, "ldot_mps") + "}";
  }
  s += "]}";
  return s;
}

TrajectoryCommand decode_trajectory(const std::string& payload) {
  const auto j = parse_object(payload);
  TrajectoryCommand c;
  c.ts_ms = field<double>(j, "ts_ms");
  c.target_id = field<int>(j, "target_id");
  c.dt_s = field<double>(j, "dt_s");
  const auto pts = j.find("points");
  if (pts == j.end() || !pts->is_array()) throw ParseError("missing field points", 0);
  for (const auto& p : *pts) {
    if (!p.is_object()) throw ParseError("trajectory point is not an object", 0);
    c.points.push_back({field<double>(p, "s_m"), field<double>(p, "sdot_mps"), field<double>(p, "l_m"),
                        field<double>(p, "ldot_mps")});
  }
  return c;
}

std::size_t telemetry_stream(const std::function<TelemetryFrame(double)>& source, Transport& link,
                             const std::string& topic, double duration_s, double start_ms) {
  if (!(duration_s >= 0.0)) throw OutOfRangeError("telemetry duration must be non-negative");
  const auto frames = static_cast<std::size_t>(std::ceil(duration_s * 1000.0 / kTelemetryPeriodMs - 1e-9));
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = start_ms + kTelemetryPeriodMs * static_cast<double>(k);
    const auto frame = source(t);
    link.publish(topic, encode_telemetry(frame), t, frame.actor_id);
  }
  return frames;
}

std::uint64_t dispatch_trajectory(Transport& link, const TrajectoryCommand& cmd, double now_ms) {
  if (cmd.points.empty() || !(cmd.dt_s > 0.0)) throw InvalidStateError("trajectory command needs points and dt > 0");
  const auto payload = encode_trajectory(cmd);
  return link.publish(target_trajectory_topic(cmd.target_id), payload, now_ms, "cloud");
}

}  // namespace troublemaker
