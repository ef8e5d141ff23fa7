#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "telem/time.hpp"

namespace telem::ingest {

enum class EventKind : std::uint8_t {
    KeyOn,
    KeyOff,
    PositionInTime,
    FixGpsOk,
    HarshAccel,
    HarshBrake,
    HarshLeft,
    HarshRight,
    SevereHarsh,
};

const char* event_kind_name(EventKind kind);

/// Maps an event description (case-insensitive) to its kind. Returns nullopt
/// for unknown descriptions.
std::optional<EventKind> event_kind_from_description(std::string_view text);

inline bool is_harsh(EventKind k) {
    return k == EventKind::HarshAccel || k == EventKind::HarshBrake || k == EventKind::HarshLeft ||
           k == EventKind::HarshRight || k == EventKind::SevereHarsh;
}

/// One timestamped telematics observation.
struct RawRecord {
    std::string device_id;
    Timestamp ts = 0;
    double gps_direction = 0.0; // degrees in [0, 360)
    double gps_speed = 0.0;     // km/h, >= 0
    EventKind event_kind = EventKind::PositionInTime;
    bool gps_valid = true;
};

struct ParseCounters {
    std::size_t rows_total = 0;
    std::size_t malformed_rows = 0;
    std::size_t unknown_event_kinds = 0;
};

/// Parses raw record rows (DeviceId, TimeStamp, GPSDirection, GPSSpeed,
/// EventDescription). Malformed rows are skipped and counted; unknown event
/// descriptions map to PositionInTime and are counted. Stream order is kept.
std::vector<RawRecord> parse_raw_records(std::istream& in, ParseCounters& counters);

/// Stable sort by timestamp; ties keep their original relative order.
void reorder_chronological(std::vector<RawRecord>& records);

/// Marks the GPS-calibration window of each trip invalid: records from a
/// KeyOn through a following FixGpsOk (with no PositionInTime in between)
/// get gps_valid=false. FixGpsOk records are always invalid.
void flag_calibration_records(std::vector<RawRecord>& records);

/// One row of a device's trip list.
struct TripListEntry {
    std::string device_id;
    Timestamp start_ts = 0;
    Timestamp end_ts = 0;
    double distance_km = 0.0;
    double duration_s = 0.0;
    double avg_speed = 0.0;
    double max_speed = 0.0;
    double roadtype_props[4] = {0, 0, 0, 0}; // urban, extra-urban, highway, other (percent)
};

std::vector<TripListEntry> parse_trip_list(std::istream& in, ParseCounters& counters);

struct HarshCounts {
    int accel = 0;
    int brake = 0;
    int left = 0;
    int right = 0;
    int severe = 0;

    int total() const { return accel + brake + left + right + severe; }
};

/// A trip-list entry matched against the device's reordered record stream.
struct Trip {
    TripListEntry list;
    std::size_t span_begin = 0; // [span_begin, span_end] inclusive record indices
    std::size_t span_end = 0;
    HarshCounts harsh;
    double observed_max_speed = 0.0;
    double match_error_start_s = 0.0;
    double match_error_end_s = 0.0;
    bool inverted_span = false;
};

/// Matches the entry's start and end against the sorted record stream by
/// minimal |timestamp - target| (ties toward the earlier record) and
/// summarizes harsh events and maximum speed over the span. Throws DataError
/// on an empty record set. An end match preceding the start match flags the
/// trip inverted; harsh counts and max speed are then left at zero.
Trip match_trip_boundaries(const TripListEntry& entry, const std::vector<RawRecord>& records);

struct FilterTally {
    std::size_t too_short = 0;          // duration_s < 180
    std::size_t avg_speed_out = 0;      // avg_speed outside [5, 150]
    std::size_t max_speed_low = 0;      // max_speed < 10
    std::size_t match_error_large = 0;  // max match error > 60 s
    std::size_t inverted_span = 0;
    std::size_t rejected = 0;
    std::size_t retained = 0;
};

/// Retains trips with duration >= 180 s, average speed in [5, 150] km/h,
/// maximum speed >= 10 km/h, both boundary match errors <= 60 s, and a
/// non-inverted span. A trip may increment several tallies.
std::vector<Trip> filter_trips(const std::vector<Trip>& trips, FilterTally& tally);

struct PolicyTrips {
    std::string policy_id;
    Timestamp coverage_start = 0;
    Timestamp coverage_end = 0;
    std::vector<Trip> trips; // start times inside coverage, chronological
    double deviation_days = 0.0;
};

enum class PolicyRejectReason { None, NoTripsInCoverage, DeviationTooLarge };

struct PolicyAssignment {
    std::optional<PolicyTrips> policy;
    PolicyRejectReason reject_reason = PolicyRejectReason::None;
};

inline constexpr double kMaxDeviationDays = 92.0;

/// Keeps trips whose start time lies within [coverage_start, coverage_end].
/// deviation_days = (first_trip_start - coverage_start)+ + (coverage_end -
/// last_trip_start)+ in days; > 92 rejects the policy.
PolicyAssignment assign_trips_to_policy(const std::vector<Trip>& trips, std::string policy_id,
                                        Timestamp coverage_start, Timestamp coverage_end);

/// Groups a mixed-device record stream by device id, preserving stream order
/// within each device.
std::map<std::string, std::vector<RawRecord>> group_by_device(std::vector<RawRecord> records);

} // namespace telem::ingest
