// Copyright 2026 The fmx Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fmx/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace fmx {

using nlohmann::json;

namespace {

constexpr std::size_t kMainTasks = 4;
constexpr const char* kMainTaskNames[kMainTasks] = {"like", "share", "video_complete", "video_view_duration"};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot_metric(const std::vector<double>& a, const std::vector<double>& m, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * m[i] * b[i];
  return s;
}

}  // namespace

std::string surface_name(std::uint32_t surface_id) {
  if (surface_id < 26) return std::string(1, static_cast<char>('A' + surface_id));
  return "S" + std::to_string(surface_id);
}

TaskCatalog TaskCatalog::make_default(std::size_t n_surfaces) {
  TaskCatalog c;
  for (const char* n : kMainTaskNames) c.names.emplace_back(n);
  c.main_count = kMainTasks;
  c.surface_tasks.resize(n_surfaces);
  // Surface D carries one task the FM may align on (Task_0) plus four more.
  static constexpr std::size_t kDefaultCounts[] = {1, 3, 3, 5};
  for (std::size_t s = 0; s < n_surfaces; ++s) {
    const std::size_t count = s < 4 ? kDefaultCounts[s] : 2;
    const std::size_t first = (s == 3) ? 0 : 1;
    for (std::size_t k = first; k < first + count; ++k) {
      c.surface_tasks[s].push_back(c.names.size());
      c.names.push_back("Surface_" + surface_name(static_cast<std::uint32_t>(s)) + "_Task_" + std::to_string(k));
    }
  }
  return c;
}

std::optional<std::size_t> TaskCatalog::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  return std::nullopt;
}

void StreamConfig::validate() const {
  if (n_users == 0 || n_items == 0 || n_surfaces == 0 || days == 0 || candidates_per_request == 0 ||
      latent_dim == 0 || !(requests_per_user_per_day > 0.0)) {
    throw std::invalid_argument("stream config: sizes and rate must be positive");
  }
  if (candidates_per_request > n_items) throw std::invalid_argument("stream config: more candidates than items");
  if (!surface_shares.empty() && surface_shares.size() != n_surfaces) {
    throw std::invalid_argument("stream config: surface_shares must have one entry per surface");
  }
}

Action InteractionEvent::action() const {
  // labels: like, share, video_complete, video_view_duration
  if (labels.size() < kMainTasks) return Action::kNone;
  if (labels[1] == 1) return Action::kShare;
  if (labels[0] == 1) return Action::kLike;
  if (labels[2] == 1) return Action::kComplete;
  if (labels[3] == 1) return Action::kView;
  return Action::kNone;
}

bool InteractionEvent::engaged() const { return action() != Action::kNone; }

// --- ground truth ----------------------------------------------------------

GroundTruth::GroundTruth(const StreamConfig& cfg, const TaskCatalog& tasks)
    : cfg_(cfg), tasks_(&tasks), rng_(splitmix(cfg.seed ^ 0x6a09e667f3bcc908ull)) {
  const std::size_t k = cfg.latent_dim;
  std::normal_distribution<double> unit(0.0, 1.0);
  const double s = 1.0 / std::sqrt(double(k));
  auto latent = [&] {
    std::vector<double> v(k);
    for (auto& x : v) x = s * unit(rng_);
    return v;
  };
  for (std::size_t u = 0; u < cfg.n_users; ++u) user_latent_.push_back(latent());
  for (std::size_t i = 0; i < cfg.n_items; ++i) item_latent_.push_back(latent());
  for (std::size_t i = 0; i < cfg.n_items; ++i) item_bias_.push_back(0.5 * unit(rng_));

  // Main-task base rates roughly: like 10%, share 3%, complete 20%, view 30%.
  static constexpr double kMainBase[kMainTasks] = {-3.2, -4.4, -2.4, -1.8};
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    TaskLink l;
    l.metric.resize(k);
    for (auto& m : l.metric) m = std::max(0.1, 1.0 + 0.5 * unit(rng_));
    l.base = t < kMainTasks ? kMainBase[t] : -2.0 - 1.2 * uni(rng_);
    l.interest_gain = 3.0 + uni(rng_);
    l.user_gain = 1.5 + uni(rng_);
    l.bias_gain = 0.6 + 0.6 * uni(rng_);
    l.hour_gain = 0.3 * uni(rng_);
    for (std::size_t sfc = 0; sfc < cfg.n_surfaces; ++sfc) l.surface_offset.push_back(0.3 * unit(rng_));
    links_.push_back(std::move(l));
  }
}

void GroundTruth::advance_day() {
  ++day_;
  if (!cfg_.drift) return;
  std::normal_distribution<double> unit(0.0, 1.0);
  const double s = 1.0 / std::sqrt(double(cfg_.latent_dim));
  for (auto& v : user_latent_)
    for (auto& x : v) x += cfg_.user_drift * s * unit(rng_);
  for (auto& v : item_latent_)
    for (auto& x : v) x += cfg_.item_drift * s * unit(rng_);
}

// Signed weight of a history item: liked by the user's latent taste or not.
// Realized labels would feed back into later labels.
double GroundTruth::affinity_sign(std::uint64_t user, std::uint64_t item) const {
  double d = 0.0;
  for (std::size_t k = 0; k < cfg_.latent_dim; ++k) d += user_latent_[user][k] * item_latent_[item][k];
  return d > 0.0 ? 1.0 : -0.5;
}

std::span<const InteractionEvent> GroundTruth::window(std::span<const InteractionEvent> history) const {
  if (history.size() > cfg_.interest_window) history = history.subspan(history.size() - cfg_.interest_window);
  return history;
}

double GroundTruth::link(std::size_t t, double interest, std::uint64_t user, std::uint64_t item,
                         std::uint32_t surface, std::int64_t ts) const {
  const TaskLink& l = links_[t];
  const double hour = static_cast<double>(ts % kSecondsPerDay) / 3600.0;
  return l.base + l.surface_offset[surface] + l.interest_gain * interest +
         l.user_gain * dot_metric(user_latent_[user], l.metric, item_latent_[item]) + l.bias_gain * item_bias_[item] +
         l.hour_gain * std::sin(2.0 * std::numbers::pi * hour / 24.0 + surface);
}

std::vector<double> GroundTruth::probabilities(std::span<const InteractionEvent> history, std::uint64_t user,
                                               std::uint64_t item, std::uint32_t surface, std::int64_t ts) const {
  const auto hist = window(history);
  const auto n = hist.size();
  std::vector<double> out(tasks_->size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> sim(n), logit(n);
  for (std::size_t t = 0; t < tasks_->size(); ++t) {
    if (!tasks_->is_main(t)) {
      const auto& own = tasks_->surface_tasks[surface];
      if (std::find(own.begin(), own.end(), t) == own.end()) continue;
    }
    const auto& metric = links_[t].metric;
    // Target-dependent attention over the history, with a zero-valued sink.
    double mx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sim[i] = dot_metric(item_latent_[hist[i].item_id], metric, item_latent_[item]);
      logit[i] = cfg_.attention_sharpness * sim[i] - cfg_.recency_decay * double(n - 1 - i);
      mx = std::max(mx, logit[i]);
    }
    double z = std::exp(-mx), acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = std::exp(logit[i] - mx);
      z += a;
      acc += a * affinity_sign(user, hist[i].item_id) * sim[i];
    }
    out[t] = sigmoid(link(t, acc / z, user, item, surface, ts));
  }
  return out;
}

std::vector<double> GroundTruth::summary_probabilities(std::span<const InteractionEvent> history,
                                                       std::uint64_t user, std::uint64_t item,
                                                       std::uint32_t surface, std::int64_t ts) const {
  const auto hist = window(history);
  const auto n = hist.size();
  std::vector<double> out(tasks_->size(), std::numeric_limits<double>::quiet_NaN());
  // Recency-weighted mean of signed history latents; independent of the target.
  std::vector<double> summary(cfg_.latent_dim, 0.0);
  double z = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::exp(-cfg_.recency_decay * double(n - 1 - i));
    z += a;
    const double sign = affinity_sign(user, hist[i].item_id);
    for (std::size_t d = 0; d < summary.size(); ++d) summary[d] += a * sign * item_latent_[hist[i].item_id][d];
  }
  for (auto& x : summary) x /= z;
  for (std::size_t t = 0; t < tasks_->size(); ++t) {
    if (!tasks_->is_main(t)) {
      const auto& own = tasks_->surface_tasks[surface];
      if (std::find(own.begin(), own.end(), t) == own.end()) continue;
    }
    const double interest = dot_metric(summary, links_[t].metric, item_latent_[item]);
    out[t] = sigmoid(link(t, interest, user, item, surface, ts));
  }
  return out;
}

// --- generation --------------------------------------------------------------

std::span<const InteractionEvent> Stream::history(std::size_t event_index) const {
  const auto& e = events[event_index];
  const auto& tl = timelines[e.user_id];
  std::size_t end = timeline_pos[event_index];
  while (end > 0 && tl[end - 1].ts >= e.ts) --end;
  return std::span(tl.data(), end);
}

namespace {

void index_timelines(Stream& s) {
  s.timelines.assign(s.config.n_users, {});
  s.timeline_pos.resize(s.events.size());
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    if (e.user_id >= s.config.n_users) throw std::out_of_range("event user id beyond n_users");
    s.timeline_pos[i] = s.timelines[e.user_id].size();
    s.timelines[e.user_id].push_back(e);
  }
}

}  // namespace

Stream make_stream(const StreamConfig& cfg, std::vector<InteractionEvent> events) {
  Stream s;
  s.config = cfg;
  s.tasks = TaskCatalog::make_default(cfg.n_surfaces);
  s.events = std::move(events);
  index_timelines(s);
  return s;
}

Stream generate(const StreamConfig& cfg) {
  cfg.validate();
  Stream s;
  s.config = cfg;
  s.tasks = TaskCatalog::make_default(cfg.n_surfaces);
  GroundTruth truth(cfg, s.tasks);
  std::mt19937_64 rng(splitmix(cfg.seed));

  struct Request {
    std::int64_t ts;
    std::uint64_t user;
    std::uint32_t surface;
  };
  const auto n_requests = static_cast<std::size_t>(
      std::llround(cfg.requests_per_user_per_day * double(cfg.n_users) * double(cfg.days)));
  std::uniform_int_distribution<std::int64_t> when(0, s.end_time() - 1);
  std::uniform_int_distribution<std::uint64_t> who(0, cfg.n_users - 1);
  std::vector<double> shares = cfg.surface_shares;
  if (shares.empty()) shares.assign(cfg.n_surfaces, 1.0);
  std::discrete_distribution<std::uint32_t> where(shares.begin(), shares.end());
  std::vector<Request> requests(n_requests);
  for (auto& r : requests) r = Request{when(rng), who(rng), where(rng)};
  std::stable_sort(requests.begin(), requests.end(), [](const Request& a, const Request& b) { return a.ts < b.ts; });

  s.timelines.assign(cfg.n_users, {});
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<std::uint64_t> pool(cfg.n_items);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto& req = requests[r];
    while (static_cast<std::int64_t>(truth.day() + 1) * kSecondsPerDay <= req.ts) truth.advance_day();
    auto& tl = s.timelines[req.user];
    std::size_t hist_end = tl.size();
    while (hist_end > 0 && tl[hist_end - 1].ts >= req.ts) --hist_end;
    const std::span<const InteractionEvent> hist(tl.data(), hist_end);
    // Partial Fisher-Yates for M distinct candidates.
    for (std::size_t c = 0; c < cfg.candidates_per_request; ++c) {
      std::uniform_int_distribution<std::size_t> pick(c, pool.size() - 1);
      std::swap(pool[c], pool[pick(rng)]);
    }
    const double hour = static_cast<double>(req.ts % kSecondsPerDay) / 3600.0;
    std::vector<InteractionEvent> batch;
    for (std::size_t c = 0; c < cfg.candidates_per_request; ++c) {
      const std::uint64_t item = pool[c];
      InteractionEvent e;
      e.request_id = r;
      e.user_id = req.user;
      e.item_id = item;
      e.surface_id = req.surface;
      e.ts = req.ts;
      auto probs = truth.probabilities(hist, req.user, item, req.surface, req.ts);
      e.labels.assign(s.tasks.size(), -1);
      for (std::size_t t = 0; t < probs.size(); ++t)
        if (!std::isnan(probs[t])) e.labels[t] = uni(rng) < probs[t] ? 1 : 0;
      e.ctx = {truth.item_bias(item) + 0.3 * noise(rng), std::sin(2.0 * std::numbers::pi * hour / 24.0),
               std::cos(2.0 * std::numbers::pi * hour / 24.0),
               std::min(1.0, double(hist.size()) / double(cfg.interest_window))};
      s.summary_probs.push_back(truth.summary_probabilities(hist, req.user, item, req.surface, req.ts));
      s.true_probs.push_back(std::move(probs));
      batch.push_back(std::move(e));
    }
    for (auto& e : batch) {
      s.timeline_pos.push_back(tl.size());
      tl.push_back(e);
      s.events.push_back(std::move(e));
    }
  }
  return s;
}

// --- features ---------------------------------------------------------------

std::uint32_t time_bucket(std::int64_t age_seconds) {
  if (age_seconds <= 0) return 0;
  const double minutes = double(age_seconds) / 60.0;
  return std::min<std::uint32_t>(15, 1 + static_cast<std::uint32_t>(std::log2(1.0 + minutes)));
}

ItemFeatures history_item_features(const InteractionEvent& e, std::int64_t now) {
  return ItemFeatures{e.item_id, e.surface_id, time_bucket(now - e.ts), static_cast<std::uint32_t>(e.action())};
}

ItemFeatures target_item_features(const InteractionEvent& e) {
  return ItemFeatures{e.item_id, e.surface_id, 0, std::nullopt};
}

std::vector<ItemFeatures> history_features(std::span<const InteractionEvent> history, std::int64_t now,
                                           std::size_t max_len) {
  if (history.size() > max_len) history = history.subspan(history.size() - max_len);
  std::vector<ItemFeatures> out;
  out.reserve(history.size());
  for (const auto& e : history) out.push_back(history_item_features(e, now));
  return out;
}

// --- event log -------------------------------------------------------------

std::string event_to_line(const InteractionEvent& e, const TaskCatalog& tasks) {
  json labels = json::object();
  for (std::size_t t = 0; t < e.labels.size(); ++t)
    if (e.labels[t] >= 0) labels[tasks.names.at(t)] = e.labels[t];
  json j = {{"request_id", e.request_id}, {"user_id", e.user_id}, {"item_id", e.item_id},
            {"surface_id", e.surface_id}, {"ts", e.ts},           {"labels", labels},
            {"ctx", e.ctx}};
  return j.dump();
}

InteractionEvent event_from_line(const std::string& line, const TaskCatalog& tasks) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& ex) {
    throw std::invalid_argument(std::string("malformed event record: ") + ex.what());
  }
  InteractionEvent e;
  try {
    e.request_id = j.at("request_id").get<std::uint64_t>();
    e.user_id = j.at("user_id").get<std::uint64_t>();
    e.item_id = j.at("item_id").get<std::uint64_t>();
    e.surface_id = j.at("surface_id").get<std::uint32_t>();
    e.ts = j.at("ts").get<std::int64_t>();
    e.ctx = j.at("ctx").get<std::vector<double>>();
    e.labels.assign(tasks.size(), -1);
    for (const auto& [name, v] : j.at("labels").items()) {
      auto t = tasks.index(name);
      if (!t) throw std::invalid_argument("unknown task in event record: " + name);
      e.labels[*t] = static_cast<std::int8_t>(v.get<int>());
    }
  } catch (const json::exception& ex) {
    throw std::invalid_argument(std::string("malformed event record: ") + ex.what());
  }
  return e;
}

void write_event_log(const std::filesystem::path& path, std::span<const InteractionEvent> events,
                     const TaskCatalog& tasks) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : events) out << event_to_line(e, tasks) << '\n';
}

std::vector<InteractionEvent> read_event_log(const std::filesystem::path& path, const TaskCatalog& tasks) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<InteractionEvent> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(event_from_line(line, tasks));
  return out;
}

// --- join ------------------------------------------------------------------

Joiner::Joiner(const Stream& stream, EmbeddingLookup lookup, std::int64_t latency)
    : stream_(&stream), lookup_(std::move(lookup)), latency_(latency) {
  if (latency < 0) throw std::invalid_argument("join latency must be non-negative");
}

void Joiner::push(std::size_t event_index) {
  if (!pending_.empty() && stream_->events[pending_.back()].ts > stream_->events[event_index].ts) {
    throw std::invalid_argument("joiner: events must be pushed in time order");
  }
  pending_.push_back(event_index);
}

std::vector<TrainingExample> Joiner::release(std::int64_t now) {
  std::vector<TrainingExample> out;
  while (!pending_.empty()) {
    const std::size_t idx = pending_.front();
    const auto& e = stream_->events[idx];
    const std::int64_t ready = e.ts + latency_;
    if (ready > now) break;
    pending_.pop_front();
    TrainingExample ex;
    ex.event = idx;
    ex.available_at = ready;
    if (lookup_) ex.embeddings = lookup_(e.request_id, e.item_id);
    if (lookup_ && ex.embeddings.empty()) ++stats_.missing_embeddings;
    ++stats_.joined;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> join(const Stream& stream, const EmbeddingLookup& lookup, std::int64_t latency,
                                  JoinStats* stats) {
  Joiner j(stream, lookup, latency);
  for (std::size_t i = 0; i < stream.events.size(); ++i) j.push(i);
  auto out = j.release(std::numeric_limits<std::int64_t>::max());
  if (stats) *stats = j.stats();
  return out;
}

// --- downsampling ----------------------------------------------------------

double downsample_uniform(std::uint64_t seed, std::uint64_t user, std::uint64_t item, std::int64_t ts) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ user);
  h = splitmix(h ^ item);
  h = splitmix(h ^ static_cast<std::uint64_t>(ts));
  return double(h >> 11) * 0x1.0p-53;
}

void validate_ratios(const std::map<std::uint32_t, double>& ratios) {
  for (const auto& [surface, r] : ratios) {
    if (!(r > 0.0 && r <= 1.0)) {
      throw std::invalid_argument("downsample ratio for surface " + std::to_string(surface) + " must be in (0,1]");
    }
  }
}

namespace {

bool keep(const std::map<std::uint32_t, double>& ratios, std::uint64_t seed, const InteractionEvent& e) {
  auto it = ratios.find(e.surface_id);
  if (it == ratios.end() || it->second >= 1.0) return true;
  return downsample_uniform(seed, e.user_id, e.item_id, e.ts) < it->second;
}

}  // namespace

std::vector<TrainingExample> downsample(const Stream& stream, std::vector<TrainingExample> examples,
                                        const std::map<std::uint32_t, double>& ratios, std::uint64_t seed) {
  validate_ratios(ratios);
  std::erase_if(examples, [&](const TrainingExample& ex) { return !keep(ratios, seed, stream.events[ex.event]); });
  return examples;
}

std::vector<InteractionEvent> downsample(std::vector<InteractionEvent> events,
                                         const std::map<std::uint32_t, double>& ratios, std::uint64_t seed) {
  validate_ratios(ratios);
  std::erase_if(events, [&](const InteractionEvent& e) { return !keep(ratios, seed, e); });
  return events;
}

}  // namespace fmx
