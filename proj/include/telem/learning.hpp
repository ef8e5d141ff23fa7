#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "telem/ingest.hpp"

namespace telem::learning {

enum class EventType : int { Accel = 0, Brake, Left, Right, Severe };
inline constexpr int kNumEventTypes = 5;
const char* event_type_name(EventType type);

enum class ClaimGroup { Claimed, NoClaim };
enum class AgeGroup : int { Young = 0, Mid, Old };

/// Age bands: below 40, 40-59, 60 and above.
AgeGroup age_group_for(int age);

/// One harsh event with its per-(policy, type) rank and the cumulative
/// driving time (hours) or distance (km) at which it occurred.
struct EventArrival {
    std::string policy_id;
    EventType event_type = EventType::Accel;
    int rank_k = 0;
    double cum_time_t = 0.0;
    ClaimGroup claim_group = ClaimGroup::NoClaim;
    std::optional<AgeGroup> age_group;
};

struct SequenceStats {
    std::size_t events_total = 0;
    std::size_t events_outside_trips = 0; // harsh records covered by no trip span
};

/// Ranks a policy's harsh events against cumulative driving time. Time
/// accrues only during trips (the listed durations); an event at in-trip
/// offset d after prior cumulative driving T gets t = T + d, in hours. With
/// by_distance, distance accrues instead and in-trip offsets are prorated by
/// elapsed time. Ranks are per event type, in time order.
std::vector<EventArrival> build_event_sequences(const ingest::PolicyTrips& policy,
                                                const std::vector<ingest::RawRecord>& records,
                                                SequenceStats& stats, bool by_distance = false);

/// Keeps arrivals whose (type, rank) is attained by >= min_count distinct
/// policies.
std::vector<EventArrival> filter_min_occurrences(const std::vector<EventArrival>& arrivals,
                                                 int min_count = 5);

struct PowerLawFit {
    double alpha = 0.0; // intercept of ln k on ln t
    double beta = 0.0;  // slope
    double se_alpha = 0.0;
    double se_beta = 0.0;
    int n_points = 0;
    double r_squared = 0.0;
};

/// OLS of ln(rank) on ln(cumulative time), pooled across policies. Throws
/// NumericError on fewer than 3 points or any t <= 0.
PowerLawFit fit_loglog(const std::vector<EventArrival>& arrivals);

struct LearningCurvature {
    double c = 0.0; // second-derivative coefficient exp(alpha) beta (beta - 1)
    double p = 0.0; // its power, beta - 2
};

LearningCurvature second_derivative_coeffs(const PowerLawFit& fit);

struct GroupSlope {
    double beta = 0.0;
    double se_beta = 0.0;
    int n_points = 0;
};

/// ln k regressed on {ln t * 1[age = a]} with a shared intercept. Groups
/// absent from the data are omitted and flagged; rows without an age group
/// are an error, as is a present group with fewer than 3 points.
struct AgeInteractionFit {
    double alpha = 0.0;
    double se_alpha = 0.0;
    std::array<std::optional<GroupSlope>, 3> slopes; // indexed by AgeGroup
};

AgeInteractionFit fit_loglog_age(const std::vector<EventArrival>& arrivals);

/// Long-form CSV report: one row per (population, rank filter, event type)
/// with the fit, curvature coefficient and power.
std::string learning_report_csv(const std::vector<EventArrival>& arrivals, int min_count = 5);

} // namespace telem::learning
