#include "telem/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "telem/csv.hpp"
#include "telem/errors.hpp"

namespace telem::ingest {

namespace {

std::string to_upper(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool parse_double_field(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

} // namespace

const char* event_kind_name(EventKind kind) {
    switch (kind) {
    case EventKind::KeyOn: return "KEY ON";
    case EventKind::KeyOff: return "KEY OFF";
    case EventKind::PositionInTime: return "POSITION IN TIME";
    case EventKind::FixGpsOk: return "FIX GPS OK";
    case EventKind::HarshAccel: return "HARSH ACCELERATION";
    case EventKind::HarshBrake: return "HARSH BRAKING";
    case EventKind::HarshLeft: return "HARSH LEFT CORNERING";
    case EventKind::HarshRight: return "HARSH RIGHT CORNERING";
    case EventKind::SevereHarsh: return "SEVERE HARSH EVENT";
    }
    return "?";
}

std::optional<EventKind> event_kind_from_description(std::string_view text) {
    const std::string u = to_upper(text);
    if (u == "KEY ON") return EventKind::KeyOn;
    if (u == "KEY OFF") return EventKind::KeyOff;
    if (u == "POSITION IN TIME") return EventKind::PositionInTime;
    if (u == "FIX GPS OK") return EventKind::FixGpsOk;
    if (u == "HARSH ACCELERATION" || u == "HARSH ACCEL") return EventKind::HarshAccel;
    if (u == "HARSH BRAKING" || u == "HARSH BRAKE") return EventKind::HarshBrake;
    if (u == "HARSH LEFT CORNERING" || u == "HARSH LEFT" || u == "LEFT CORNERING")
        return EventKind::HarshLeft;
    if (u == "HARSH RIGHT CORNERING" || u == "HARSH RIGHT" || u == "RIGHT CORNERING")
        return EventKind::HarshRight;
    if (u == "SEVERE HARSH EVENT" || u == "SEVERE HARSH") return EventKind::SevereHarsh;
    return std::nullopt;
}

std::vector<RawRecord> parse_raw_records(std::istream& in, ParseCounters& counters) {
    DelimitedReader reader(in);
    std::vector<RawRecord> out;
    std::vector<std::string> fields;
    while (reader.next(fields)) {
        ++counters.rows_total;
        if (fields.size() < 5) {
            ++counters.malformed_rows;
            continue;
        }
        RawRecord rec;
        rec.device_id = fields[0];
        auto ts = parse_timestamp(fields[1]);
        double direction, speed;
        if (!ts || rec.device_id.empty() || !parse_double_field(fields[2], direction) ||
            !parse_double_field(fields[3], speed) || speed < 0.0 || direction < 0.0 ||
            direction >= 360.0) {
            ++counters.malformed_rows;
            continue;
        }
        rec.ts = *ts;
        rec.gps_direction = direction;
        rec.gps_speed = speed;
        auto kind = event_kind_from_description(fields[4]);
        if (!kind) {
            ++counters.unknown_event_kinds;
            rec.event_kind = EventKind::PositionInTime;
        } else {
            rec.event_kind = *kind;
        }
        rec.gps_valid = rec.event_kind != EventKind::FixGpsOk;
        out.push_back(std::move(rec));
    }
    return out;
}

void reorder_chronological(std::vector<RawRecord>& records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const RawRecord& a, const RawRecord& b) { return a.ts < b.ts; });
}

void flag_calibration_records(std::vector<RawRecord>& records) {
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].event_kind != EventKind::KeyOn) continue;
        // Scan ahead for FIX GPS OK before the first position report.
        std::size_t j = i + 1;
        while (j < records.size() && records[j].event_kind != EventKind::PositionInTime &&
               records[j].event_kind != EventKind::FixGpsOk &&
               records[j].event_kind != EventKind::KeyOff)
            ++j;
        if (j < records.size() && records[j].event_kind == EventKind::FixGpsOk) {
            for (std::size_t k = i; k <= j; ++k) records[k].gps_valid = false;
        }
    }
    for (auto& r : records)
        if (r.event_kind == EventKind::FixGpsOk) r.gps_valid = false;
}

std::vector<TripListEntry> parse_trip_list(std::istream& in, ParseCounters& counters) {
    DelimitedReader reader(in);
    std::vector<TripListEntry> out;
    std::vector<std::string> fields;
    while (reader.next(fields)) {
        ++counters.rows_total;
        if (fields.size() < 11) {
            ++counters.malformed_rows;
            continue;
        }
        TripListEntry e;
        e.device_id = fields[0];
        auto start = parse_timestamp(fields[1]);
        auto end = parse_timestamp(fields[2]);
        bool ok = start && end && *end > *start && !e.device_id.empty();
        ok = ok && parse_double_field(fields[3], e.distance_km) && e.distance_km >= 0;
        ok = ok && parse_double_field(fields[4], e.duration_s) && e.duration_s > 0;
        ok = ok && parse_double_field(fields[5], e.avg_speed);
        ok = ok && parse_double_field(fields[6], e.max_speed);
        for (int i = 0; ok && i < 4; ++i)
            ok = parse_double_field(fields[7 + i], e.roadtype_props[i]) && e.roadtype_props[i] >= 0;
        if (!ok) {
            ++counters.malformed_rows;
            continue;
        }
        e.start_ts = *start;
        e.end_ts = *end;
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

// Index of the sorted record whose timestamp is closest to target,
// ties broken toward the earlier record.
std::size_t closest_record(const std::vector<RawRecord>& records, Timestamp target) {
    auto it = std::lower_bound(records.begin(), records.end(), target,
                               [](const RawRecord& r, Timestamp t) { return r.ts < t; });
    if (it == records.begin()) return 0;
    if (it == records.end()) return records.size() - 1;
    std::size_t hi = static_cast<std::size_t>(it - records.begin());
    std::size_t lo = hi - 1;
    // <= keeps the earlier record on ties.
    return (target - records[lo].ts) <= (records[hi].ts - target) ? lo : hi;
}

} // namespace

Trip match_trip_boundaries(const TripListEntry& entry, const std::vector<RawRecord>& records) {
    if (records.empty()) throw DataError("match_trip_boundaries: empty record set");
    Trip trip;
    trip.list = entry;
    trip.span_begin = closest_record(records, entry.start_ts);
    trip.span_end = closest_record(records, entry.end_ts);
    trip.match_error_start_s =
        static_cast<double>(std::llabs(records[trip.span_begin].ts - entry.start_ts));
    trip.match_error_end_s =
        static_cast<double>(std::llabs(records[trip.span_end].ts - entry.end_ts));
    if (trip.span_end < trip.span_begin) {
        trip.inverted_span = true;
        return trip;
    }
    for (std::size_t i = trip.span_begin; i <= trip.span_end; ++i) {
        const RawRecord& r = records[i];
        trip.observed_max_speed = std::max(trip.observed_max_speed, r.gps_speed);
        switch (r.event_kind) {
        case EventKind::HarshAccel: ++trip.harsh.accel; break;
        case EventKind::HarshBrake: ++trip.harsh.brake; break;
        case EventKind::HarshLeft: ++trip.harsh.left; break;
        case EventKind::HarshRight: ++trip.harsh.right; break;
        case EventKind::SevereHarsh: ++trip.harsh.severe; break;
        default: break;
        }
    }
    return trip;
}

std::vector<Trip> filter_trips(const std::vector<Trip>& trips, FilterTally& tally) {
    std::vector<Trip> out;
    for (const Trip& t : trips) {
        bool ok = true;
        if (t.list.duration_s < 180.0) {
            ++tally.too_short;
            ok = false;
        }
        if (t.list.avg_speed < 5.0 || t.list.avg_speed > 150.0) {
            ++tally.avg_speed_out;
            ok = false;
        }
        if (t.list.max_speed < 10.0) {
            ++tally.max_speed_low;
            ok = false;
        }
        if (std::max(t.match_error_start_s, t.match_error_end_s) > 60.0) {
            ++tally.match_error_large;
            ok = false;
        }
        if (t.inverted_span) {
            ++tally.inverted_span;
            ok = false;
        }
        if (ok) {
            ++tally.retained;
            out.push_back(t);
        } else {
            ++tally.rejected;
        }
    }
    return out;
}

PolicyAssignment assign_trips_to_policy(const std::vector<Trip>& trips, std::string policy_id,
                                        Timestamp coverage_start, Timestamp coverage_end) {
    PolicyAssignment result;
    PolicyTrips pol;
    pol.policy_id = std::move(policy_id);
    pol.coverage_start = coverage_start;
    pol.coverage_end = coverage_end;
    for (const Trip& t : trips)
        if (t.list.start_ts >= coverage_start && t.list.start_ts <= coverage_end)
            pol.trips.push_back(t);
    if (pol.trips.empty()) {
        result.reject_reason = PolicyRejectReason::NoTripsInCoverage;
        return result;
    }
    std::stable_sort(pol.trips.begin(), pol.trips.end(), [](const Trip& a, const Trip& b) {
        return a.list.start_ts < b.list.start_ts;
    });
    const double day = static_cast<double>(kSecondsPerDay);
    double lead = std::max<double>(0.0, static_cast<double>(pol.trips.front().list.start_ts - coverage_start)) / day;
    double tail = std::max<double>(0.0, static_cast<double>(coverage_end - pol.trips.back().list.start_ts)) / day;
    pol.deviation_days = lead + tail;
    if (pol.deviation_days > kMaxDeviationDays) {
        result.reject_reason = PolicyRejectReason::DeviationTooLarge;
        return result;
    }
    result.policy = std::move(pol);
    return result;
}

std::map<std::string, std::vector<RawRecord>> group_by_device(std::vector<RawRecord> records) {
    std::map<std::string, std::vector<RawRecord>> out;
    for (auto& r : records) out[r.device_id].push_back(std::move(r));
    return out;
}

} // namespace telem::ingest
