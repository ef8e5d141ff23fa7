#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "telem/ingest.hpp"
#include "telem/time.hpp"

namespace telem::features {

/// Speed bins [0,0.5), [0.5,h), [h,2h), ..., [(m_last)h, inf) where m_last*h
/// is the largest multiple of h not exceeding 130 km/h.
struct BinConfig {
    std::vector<double> boundaries; // lower edges: 0, 0.5, h, 2h, ...
    int width_h = 10;
    int m = 0; // bin count

    static BinConfig for_width(int h);
    static BinConfig default_config() { return for_width(10); }
};

/// Bin index of a speed under cfg; throws ConfigError on negative speed.
int speed_bin_index(double speed, const BinConfig& cfg);

struct SpeedTransitionMatrix {
    BinConfig bin_config;
    Eigen::MatrixXd weights; // scaled transition counts, m x m
    Eigen::MatrixXd probs;   // row-stochastic on visited rows, zero elsewhere
    std::vector<bool> visited_rows;

    /// probs flattened row-major into a length m*m vector.
    Eigen::VectorXd flatten() const;
};

struct AccumulateStats {
    std::size_t pairs = 0;
    std::size_t skipped_nonpositive_gap = 0;
};

/// Adds the scaled transition counts of one trip's gps-valid observations to
/// `weights`: each consecutive pair contributes 60/(dt seconds) to the cell
/// (bin(s_n), bin(s_{n+1})). Pairs with dt <= 0 are skipped and counted.
/// Observations are (timestamp, speed) and must be chronological.
void accumulate_transitions(const std::vector<std::pair<Timestamp, double>>& trip_observations,
                            const BinConfig& cfg, Eigen::MatrixXd& weights,
                            AccumulateStats& stats);

/// Divides visited rows (positive row sum) by their sums; unvisited rows are
/// zero and flagged.
SpeedTransitionMatrix normalize_matrix(const Eigen::MatrixXd& weights, const BinConfig& cfg);

/// Collects the gps-valid (timestamp, speed) observations of one trip's
/// record span.
std::vector<std::pair<Timestamp, double>> trip_observations(
    const ingest::Trip& trip, const std::vector<ingest::RawRecord>& records);

/// Transition matrix over all trips of one policy; transitions never cross
/// trip boundaries.
SpeedTransitionMatrix policy_transition_matrix(const ingest::PolicyTrips& policy,
                                               const std::vector<ingest::RawRecord>& records,
                                               const BinConfig& cfg, AccumulateStats& stats);

inline constexpr int kNumTimeslots = 6; // four-hour wall-clock slots

/// Apportions each trip's duration to the six 4-hour slots it overlaps
/// (splitting across slot and midnight boundaries) and returns percentages of
/// total driving time. Throws NumericError when total time is zero.
std::array<double, kNumTimeslots> timeslot_proportions(const std::vector<ingest::Trip>& trips);

/// Slot of the trip's start time, except that a trip starting in the final
/// hour of a slot and ending within 15 minutes past the slot boundary stays
/// in the start slot.
int classify_trip_timeslot(Timestamp start_ts, Timestamp end_ts);

/// Per-policy covariates of the feature table.
struct PolicySummary {
    std::string policy_id;
    double total_distance = 0.0; // km
    double total_time = 0.0;     // minutes
    int num_trips = 0;
    double avg_speed = 0.0; // km/h, trip-duration weighted
    double max_speed = 0.0; // km/h
    int num_acc = 0;
    int num_brake = 0;
    int num_left = 0;
    int num_right = 0;
    int num_severe = 0;
    std::array<double, 4> prop_roadtype = {0, 0, 0, 0};
    std::array<double, kNumTimeslots> prop_time = {0, 0, 0, 0, 0, 0};
    std::vector<double> pc_scores;
};

/// Scalar aggregates over a non-empty retained trip set (everything but the
/// PC scores and timeslot proportions).
PolicySummary policy_aggregates(const std::vector<ingest::Trip>& trips);

/// Full summary: aggregates plus timeslot proportions.
PolicySummary summarize_policy(const ingest::PolicyTrips& policy);

} // namespace telem::features
