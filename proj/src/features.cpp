#include "telem/features.hpp"

#include <algorithm>
#include <cmath>

#include "telem/errors.hpp"

namespace telem::features {

BinConfig BinConfig::for_width(int h) {
    if (h < 2 || h > 30) throw ConfigError("bin width must be in [2, 30], got " + std::to_string(h));
    BinConfig cfg;
    cfg.width_h = h;
    int multiples = 130 / h; // largest k with k*h <= 130
    cfg.boundaries.push_back(0.0);
    cfg.boundaries.push_back(0.5);
    for (int k = 1; k <= multiples; ++k) cfg.boundaries.push_back(static_cast<double>(k * h));
    cfg.m = static_cast<int>(cfg.boundaries.size());
    return cfg;
}

int speed_bin_index(double speed, const BinConfig& cfg) {
    if (speed < 0.0) throw ConfigError("negative speed");
    auto it = std::upper_bound(cfg.boundaries.begin(), cfg.boundaries.end(), speed);
    return static_cast<int>(it - cfg.boundaries.begin()) - 1;
}

Eigen::VectorXd SpeedTransitionMatrix::flatten() const {
    const int m = bin_config.m;
    Eigen::VectorXd v(m * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) v[i * m + j] = probs(i, j);
    return v;
}

void accumulate_transitions(const std::vector<std::pair<Timestamp, double>>& obs,
                            const BinConfig& cfg, Eigen::MatrixXd& weights,
                            AccumulateStats& stats) {
    if (weights.rows() != cfg.m || weights.cols() != cfg.m)
        throw ConfigError("accumulator shape does not match bin config");
    for (std::size_t i = 0; i + 1 < obs.size(); ++i) {
        const double dt = static_cast<double>(obs[i + 1].first - obs[i].first);
        if (dt <= 0.0) {
            ++stats.skipped_nonpositive_gap;
            continue;
        }
        const int from = speed_bin_index(obs[i].second, cfg);
        const int to = speed_bin_index(obs[i + 1].second, cfg);
        weights(from, to) += 60.0 / dt;
        ++stats.pairs;
    }
}

SpeedTransitionMatrix normalize_matrix(const Eigen::MatrixXd& weights, const BinConfig& cfg) {
    SpeedTransitionMatrix out;
    out.bin_config = cfg;
    out.weights = weights;
    out.probs = Eigen::MatrixXd::Zero(cfg.m, cfg.m);
    out.visited_rows.assign(cfg.m, false);
    for (int i = 0; i < cfg.m; ++i) {
        const double row_sum = weights.row(i).sum();
        if (row_sum > 0.0) {
            out.probs.row(i) = weights.row(i) / row_sum;
            out.visited_rows[i] = true;
        }
    }
    return out;
}

std::vector<std::pair<Timestamp, double>> trip_observations(
    const ingest::Trip& trip, const std::vector<ingest::RawRecord>& records) {
    std::vector<std::pair<Timestamp, double>> obs;
    if (trip.inverted_span) return obs;
    for (std::size_t i = trip.span_begin; i <= trip.span_end && i < records.size(); ++i)
        if (records[i].gps_valid) obs.emplace_back(records[i].ts, records[i].gps_speed);
    return obs;
}

SpeedTransitionMatrix policy_transition_matrix(const ingest::PolicyTrips& policy,
                                               const std::vector<ingest::RawRecord>& records,
                                               const BinConfig& cfg, AccumulateStats& stats) {
    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(cfg.m, cfg.m);
    for (const auto& trip : policy.trips)
        accumulate_transitions(trip_observations(trip, records), cfg, weights, stats);
    return normalize_matrix(weights, cfg);
}

std::array<double, kNumTimeslots> timeslot_proportions(const std::vector<ingest::Trip>& trips) {
    std::array<double, kNumTimeslots> seconds{};
    double total = 0.0;
    constexpr Timestamp slot_len = 4 * 3600;
    for (const auto& t : trips) {
        Timestamp cur = t.list.start_ts;
        const Timestamp end = t.list.end_ts;
        while (cur < end) {
            const int sod = seconds_of_day(cur);
            const int slot = sod / static_cast<int>(slot_len);
            const Timestamp slot_remaining = slot_len - (sod % slot_len);
            const Timestamp chunk = std::min<Timestamp>(slot_remaining, end - cur);
            seconds[slot] += static_cast<double>(chunk);
            total += static_cast<double>(chunk);
            cur += chunk;
        }
    }
    if (total <= 0.0) throw NumericError("timeslot_proportions: zero total driving time");
    std::array<double, kNumTimeslots> pct{};
    for (int i = 0; i < kNumTimeslots; ++i) pct[i] = 100.0 * seconds[i] / total;
    return pct;
}

int classify_trip_timeslot(Timestamp start_ts, Timestamp end_ts) {
    constexpr int slot_len = 4 * 3600;
    const int start_sod = seconds_of_day(start_ts);
    const int slot = start_sod / slot_len;
    const int into_final_hour = start_sod - (slot * slot_len + 3 * 3600);
    if (into_final_hour >= 0) {
        // Starts in the slot's final hour: stays only when ending within
        // 15 minutes past the boundary.
        const Timestamp boundary = start_ts + (slot_len - start_sod % slot_len);
        if (end_ts > boundary + 15 * 60) return (slot + 1) % kNumTimeslots;
    }
    return slot;
}

PolicySummary policy_aggregates(const std::vector<ingest::Trip>& trips) {
    if (trips.empty()) throw NumericError("policy_aggregates: empty trip set");
    PolicySummary s;
    double dur_total = 0.0;
    double speed_weighted = 0.0;
    std::array<double, 4> road_weighted{};
    for (const auto& t : trips) {
        const double dur = t.list.duration_s;
        s.total_distance += t.list.distance_km;
        dur_total += dur;
        speed_weighted += t.list.avg_speed * dur;
        s.max_speed = std::max(s.max_speed, t.list.max_speed);
        s.num_acc += t.harsh.accel;
        s.num_brake += t.harsh.brake;
        s.num_left += t.harsh.left;
        s.num_right += t.harsh.right;
        s.num_severe += t.harsh.severe;
        for (int i = 0; i < 4; ++i) road_weighted[i] += t.list.roadtype_props[i] * dur;
    }
    s.num_trips = static_cast<int>(trips.size());
    s.total_time = dur_total / 60.0;
    s.avg_speed = speed_weighted / dur_total;
    for (int i = 0; i < 4; ++i) s.prop_roadtype[i] = road_weighted[i] / dur_total;
    return s;
}

PolicySummary summarize_policy(const ingest::PolicyTrips& policy) {
    PolicySummary s = policy_aggregates(policy.trips);
    s.policy_id = policy.policy_id;
    s.prop_time = timeslot_proportions(policy.trips);
    return s;
}

} // namespace telem::features
