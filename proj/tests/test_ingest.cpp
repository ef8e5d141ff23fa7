#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "telem/errors.hpp"
#include "telem/ingest.hpp"
#include "telem/time.hpp"

using namespace telem;
using namespace telem::ingest;

namespace {

RawRecord rec(Timestamp ts, EventKind kind = EventKind::PositionInTime, double speed = 50.0) {
    RawRecord r;
    r.device_id = "D1";
    r.ts = ts;
    r.gps_speed = speed;
    r.event_kind = kind;
    return r;
}

Trip trip_with(double duration_s, double avg, double maxv, double err = 0.0,
               bool inverted = false) {
    Trip t;
    t.list.duration_s = duration_s;
    t.list.avg_speed = avg;
    t.list.max_speed = maxv;
    t.match_error_start_s = err;
    t.match_error_end_s = err;
    t.inverted_span = inverted;
    return t;
}

} // namespace

TEST_CASE("timestamp parsing round-trips the record format") {
    auto ts = parse_timestamp("07/16/2018 11:55:28");
    REQUIRE(ts.has_value());
    CHECK(format_timestamp(*ts) == "07/16/2018 11:55:28");
    CHECK(parse_timestamp("7/16/2018 11:55:28") == std::nullopt);
    CHECK(parse_timestamp("07/16/2018") == std::nullopt);
    CHECK(parse_timestamp("13/01/2018 00:00:00") == std::nullopt);
    CHECK(parse_timestamp("02/30/2018 00:00:00") == std::nullopt);
    CHECK(parse_timestamp("07/16/2018 24:00:00") == std::nullopt);
    // One minute apart.
    CHECK(*parse_timestamp("07/16/2018 11:56:28") - *ts == 60);
    // Midnight boundary.
    CHECK(*parse_timestamp("07/17/2018 00:00:00") - *parse_timestamp("07/16/2018 23:59:59") == 1);
}

TEST_CASE("event descriptions map case-insensitively with synonyms") {
    CHECK(event_kind_from_description("KEY ON") == EventKind::KeyOn);
    CHECK(event_kind_from_description("key off") == EventKind::KeyOff);
    CHECK(event_kind_from_description("Position In Time") == EventKind::PositionInTime);
    CHECK(event_kind_from_description("FIX GPS OK") == EventKind::FixGpsOk);
    CHECK(event_kind_from_description("HARSH BRAKE") == EventKind::HarshBrake);
    CHECK(event_kind_from_description("harsh braking") == EventKind::HarshBrake);
    CHECK(event_kind_from_description("LEFT CORNERING") == EventKind::HarshLeft);
    CHECK(event_kind_from_description("SEVERE HARSH EVENT") == EventKind::SevereHarsh);
    CHECK(event_kind_from_description("TOTALLY NEW THING") == std::nullopt);
    // name -> kind round trip
    for (EventKind k : {EventKind::KeyOn, EventKind::KeyOff, EventKind::PositionInTime,
                        EventKind::FixGpsOk, EventKind::HarshAccel, EventKind::HarshBrake,
                        EventKind::HarshLeft, EventKind::HarshRight, EventKind::SevereHarsh})
        CHECK(event_kind_from_description(event_kind_name(k)) == k);
}

TEST_CASE("parse_raw_records keeps good rows, counts bad ones") {
    std::istringstream in(
        "DeviceId\tTimeStamp\tGPSDirection\tGPSSpeed\tEventDescription\n"
        "2022123\t07/16/2018 11:55:28\t120\t43\tPOSITION IN TIME\n"
        "2022123\t07/16/2018 11:55:48\t121\t40\tHARSH BRAKING\n"
        "2022123\tgarbage\t120\t43\tPOSITION IN TIME\n"      // bad timestamp
        "2022123\t07/16/2018 11:57:28\t400\t43\tPOSITION IN TIME\n" // bad direction
        "2022123\t07/16/2018 11:58:28\t120\t-2\tPOSITION IN TIME\n" // bad speed
        "2022123\t07/16/2018 11:59:28\t120\t43\n"                   // short row
        "2022123\t07/16/2018 12:00:28\t120\t43\tMYSTERY EVENT\n"    // unknown kind
        "2022123\t07/16/2018 12:01:28\t0\t0\tFIX GPS OK\n");
    ParseCounters c;
    auto records = parse_raw_records(in, c);
    CHECK(c.rows_total == 8);
    CHECK(c.malformed_rows == 4);
    CHECK(c.unknown_event_kinds == 1);
    REQUIRE(records.size() == 4);
    CHECK(records[0].device_id == "2022123");
    CHECK(records[0].gps_speed == 43.0);
    CHECK(records[1].event_kind == EventKind::HarshBrake);
    CHECK(records[2].event_kind == EventKind::PositionInTime); // unknown maps here
    CHECK(records[3].event_kind == EventKind::FixGpsOk);
    CHECK_FALSE(records[3].gps_valid);
}

TEST_CASE("parse_raw_records accepts comma-delimited input too") {
    std::istringstream in(
        "DeviceId,TimeStamp,GPSDirection,GPSSpeed,EventDescription\n"
        "99,01/02/2018 03:04:05,10,20,KEY ON\n");
    ParseCounters c;
    auto records = parse_raw_records(in, c);
    REQUIRE(records.size() == 1);
    CHECK(records[0].event_kind == EventKind::KeyOn);
}

TEST_CASE("reorder_chronological is a stable sort by timestamp") {
    std::vector<RawRecord> records;
    std::mt19937_64 rng(42);
    for (int i = 0; i < 500; ++i) {
        auto r = rec(static_cast<Timestamp>(rng() % 100)); // many ties
        r.gps_direction = i; // original index, to observe stability
        records.push_back(r);
    }
    auto sorted = records;
    reorder_chronological(sorted);
    CHECK(std::is_sorted(sorted.begin(), sorted.end(),
                         [](const RawRecord& a, const RawRecord& b) { return a.ts < b.ts; }));
    // Stability: equal timestamps keep their original relative order.
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i - 1].ts == sorted[i].ts)
            CHECK(sorted[i - 1].gps_direction < sorted[i].gps_direction);
    // Permutation fixture: sorting a reversed copy gives the same sequence.
    auto reversed = records;
    std::reverse(reversed.begin(), reversed.end());
    reorder_chronological(reversed);
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(reversed[i].ts == sorted[i].ts);
}

TEST_CASE("flag_calibration_records invalidates the KEY ON .. FIX GPS OK window") {
    std::vector<RawRecord> records = {
        rec(0, EventKind::KeyOn),
        rec(5, EventKind::HarshBrake),
        rec(10, EventKind::FixGpsOk),
        rec(60, EventKind::PositionInTime),
        rec(120, EventKind::KeyOff),
        rec(200, EventKind::KeyOn), // second trip: position fix arrives first
        rec(260, EventKind::PositionInTime),
        rec(290, EventKind::FixGpsOk),
        rec(320, EventKind::KeyOff),
    };
    flag_calibration_records(records);
    CHECK_FALSE(records[0].gps_valid);
    CHECK_FALSE(records[1].gps_valid);
    CHECK_FALSE(records[2].gps_valid);
    CHECK(records[3].gps_valid);
    CHECK(records[4].gps_valid);
    CHECK(records[5].gps_valid); // no calibration window: position came first
    CHECK(records[6].gps_valid);
    CHECK_FALSE(records[7].gps_valid); // FIX GPS OK itself is never valid
    CHECK(records[8].gps_valid);
}

TEST_CASE("match_trip_boundaries picks nearest records, earlier on ties") {
    std::vector<RawRecord> records = {
        rec(0, EventKind::KeyOn),
        rec(60), rec(120, EventKind::HarshAccel, 80.0), rec(180),
        rec(240, EventKind::KeyOff),
    };
    TripListEntry e;
    e.device_id = "D1";
    e.start_ts = 25;
    e.end_ts = 230;
    e.duration_s = 205;
    auto trip = match_trip_boundaries(e, records);
    CHECK(trip.span_begin == 0); // 25 is closer to 0 than to 60
    CHECK(trip.span_end == 4);
    CHECK(trip.match_error_start_s == 25.0);
    CHECK(trip.match_error_end_s == 10.0);
    CHECK(trip.harsh.accel == 1);
    CHECK(trip.observed_max_speed == 80.0);

    // Exact tie: target 30 is equidistant from 0 and 60 -> earlier record.
    e.start_ts = 30;
    CHECK(match_trip_boundaries(e, records).span_begin == 0);

    // Inverted span: end matches before start.
    e.start_ts = 235;
    e.end_ts = 10;
    auto inv = match_trip_boundaries(e, records);
    CHECK(inv.inverted_span);
    CHECK(inv.harsh.total() == 0);
    CHECK(inv.observed_max_speed == 0.0);

    CHECK_THROWS_AS(match_trip_boundaries(e, {}), DataError);
}

TEST_CASE("match_trip_boundaries agrees with a brute-force nearest scan") {
    std::mt19937_64 rng(7);
    std::vector<RawRecord> records;
    Timestamp ts = 0;
    for (int i = 0; i < 200; ++i) {
        ts += 1 + static_cast<Timestamp>(rng() % 90);
        records.push_back(rec(ts));
    }
    for (int t = 0; t < 100; ++t) {
        TripListEntry e;
        e.device_id = "D1";
        e.start_ts = static_cast<Timestamp>(rng() % (ts + 100));
        e.end_ts = e.start_ts + 1 + static_cast<Timestamp>(rng() % 2000);
        e.duration_s = static_cast<double>(e.end_ts - e.start_ts);
        auto trip = match_trip_boundaries(e, records);
        const auto brute = [&](Timestamp target) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < records.size(); ++i)
                if (std::llabs(records[i].ts - target) < std::llabs(records[best].ts - target))
                    best = i; // strict < keeps the earlier index on ties
            return best;
        };
        CHECK(trip.span_begin == brute(e.start_ts));
        CHECK(trip.span_end == brute(e.end_ts));
    }
}

TEST_CASE("filter_trips applies every criterion at its boundary") {
    FilterTally tally;
    std::vector<Trip> trips = {
        trip_with(180, 50, 100),        // exactly at the duration floor: kept
        trip_with(179, 50, 100),        // too short
        trip_with(600, 5, 100),         // avg at lower bound: kept
        trip_with(600, 4.9, 100),       // avg too low
        trip_with(600, 150, 160),       // avg at upper bound: kept
        trip_with(600, 151, 160),       // avg too high
        trip_with(600, 50, 10),         // max at bound: kept
        trip_with(600, 50, 9.9),        // max too low
        trip_with(600, 50, 100, 60),    // match error at bound: kept
        trip_with(600, 50, 100, 61),    // match error too large
        trip_with(600, 50, 100, 0, true), // inverted
        trip_with(100, 2, 5, 99),       // fails several criteria at once
    };
    auto kept = filter_trips(trips, tally);
    CHECK(kept.size() == 5);
    CHECK(tally.retained == 5);
    CHECK(tally.rejected == 7);
    CHECK(tally.too_short == 2);
    CHECK(tally.avg_speed_out == 3);
    CHECK(tally.max_speed_low == 2);
    CHECK(tally.match_error_large == 2);
    CHECK(tally.inverted_span == 1);
}

TEST_CASE("filter_trips matches a brute-force predicate on random trips") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dur(0, 1000), speed(0, 200), err(0, 100);
    std::vector<Trip> trips;
    for (int i = 0; i < 500; ++i) {
        auto t = trip_with(dur(rng), speed(rng), speed(rng), err(rng), rng() % 10 == 0);
        t.match_error_end_s = err(rng);
        trips.push_back(t);
    }
    FilterTally tally;
    auto kept = filter_trips(trips, tally);
    std::size_t expected = 0;
    for (const auto& t : trips) {
        const bool ok = t.list.duration_s >= 180 && t.list.avg_speed >= 5 &&
                        t.list.avg_speed <= 150 && t.list.max_speed >= 10 &&
                        std::max(t.match_error_start_s, t.match_error_end_s) <= 60 &&
                        !t.inverted_span;
        expected += ok;
    }
    CHECK(kept.size() == expected);
    CHECK(tally.retained + tally.rejected == trips.size());
}

TEST_CASE("assign_trips_to_policy keeps in-coverage trips and screens deviation") {
    const Timestamp day = kSecondsPerDay;
    const Timestamp start = 1000 * day;
    const Timestamp end = start + 365 * day;
    auto trip_at = [&](Timestamp ts) {
        Trip t = trip_with(600, 50, 100);
        t.list.start_ts = ts;
        t.list.end_ts = ts + 600;
        return t;
    };

    // Trips outside coverage are dropped; inside ones kept chronologically.
    {
        std::vector<Trip> trips = {trip_at(start - day), trip_at(start + 10 * day),
                                   trip_at(start + 5 * day), trip_at(end + day),
                                   trip_at(end - 5 * day)};
        auto a = assign_trips_to_policy(trips, "P1", start, end);
        REQUIRE(a.policy.has_value());
        CHECK(a.policy->trips.size() == 3);
        CHECK(std::is_sorted(a.policy->trips.begin(), a.policy->trips.end(),
                             [](const Trip& x, const Trip& y) {
                                 return x.list.start_ts < y.list.start_ts;
                             }));
        // 5 days leading + 5 days trailing deviation.
        CHECK(a.policy->deviation_days == doctest::Approx(10.0));
    }

    // Deviation at exactly the limit is kept; above it the policy is rejected.
    {
        std::vector<Trip> trips = {trip_at(start + 46 * day), trip_at(end - 46 * day)};
        auto a = assign_trips_to_policy(trips, "P1", start, end);
        CHECK(a.policy.has_value()); // 46 + 46 = 92
    }
    {
        std::vector<Trip> trips = {trip_at(start + 47 * day), trip_at(end - 46 * day)};
        auto a = assign_trips_to_policy(trips, "P1", start, end);
        CHECK_FALSE(a.policy.has_value());
        CHECK(a.reject_reason == PolicyRejectReason::DeviationTooLarge);
    }

    // No trips in coverage at all.
    {
        std::vector<Trip> trips = {trip_at(start - 2 * day)};
        auto a = assign_trips_to_policy(trips, "P1", start, end);
        CHECK_FALSE(a.policy.has_value());
        CHECK(a.reject_reason == PolicyRejectReason::NoTripsInCoverage);
    }
}

TEST_CASE("group_by_device splits a mixed stream preserving order") {
    std::vector<RawRecord> stream;
    for (int i = 0; i < 20; ++i) {
        auto r = rec(i);
        r.device_id = i % 2 ? "A" : "B";
        r.gps_direction = i;
        stream.push_back(r);
    }
    auto grouped = group_by_device(stream);
    REQUIRE(grouped.size() == 2);
    CHECK(grouped["A"].size() == 10);
    CHECK(grouped["B"].size() == 10);
    for (std::size_t i = 1; i < grouped["A"].size(); ++i)
        CHECK(grouped["A"][i - 1].gps_direction < grouped["A"][i].gps_direction);
}

TEST_CASE("parse_trip_list screens malformed rows") {
    std::istringstream in(
        "DeviceId\tStartTime\tEndTime\tDistanceKm\tDurationS\tAvgSpeed\tMaxSpeed"
        "\tPropUrban\tPropExtraUrban\tPropHighway\tPropOther\n"
        "D1\t07/16/2018 11:00:00\t07/16/2018 11:30:00\t20\t1800\t40\t90\t25\t25\t25\t25\n"
        "D1\t07/16/2018 12:00:00\t07/16/2018 11:30:00\t20\t1800\t40\t90\t25\t25\t25\t25\n" // end<start
        "D1\t07/16/2018 13:00:00\t07/16/2018 13:30:00\t-1\t1800\t40\t90\t25\t25\t25\t25\n" // neg dist
        "D1\t07/16/2018 14:00:00\t07/16/2018 14:30:00\t20\t1800\t40\t90\t25\t25\n");        // short
    ParseCounters c;
    auto trips = parse_trip_list(in, c);
    CHECK(c.rows_total == 4);
    CHECK(c.malformed_rows == 3);
    REQUIRE(trips.size() == 1);
    CHECK(trips[0].duration_s == 1800.0);
    CHECK(trips[0].roadtype_props[2] == 25.0);
}
