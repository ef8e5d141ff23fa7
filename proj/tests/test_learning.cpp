#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "telem/errors.hpp"
#include "telem/learning.hpp"

using namespace telem;
using namespace telem::learning;

namespace {

// A policy with `n_trips` back-to-back-listed 60-minute trips whose record
// spans hold the given per-trip event offsets (seconds into the trip).
struct Fixture {
    ingest::PolicyTrips policy;
    std::vector<ingest::RawRecord> records;

    void add_trip(Timestamp start,
                  const std::vector<std::pair<int, ingest::EventKind>>& events,
                  double duration_s = 3600.0, double distance_km = 60.0) {
        ingest::Trip trip;
        trip.list.device_id = "D";
        trip.list.start_ts = start;
        trip.list.end_ts = start + static_cast<Timestamp>(duration_s);
        trip.list.duration_s = duration_s;
        trip.list.distance_km = distance_km;
        trip.span_begin = records.size();
        ingest::RawRecord r;
        r.device_id = "D";
        r.ts = start;
        r.event_kind = ingest::EventKind::KeyOn;
        records.push_back(r);
        for (auto [offset, kind] : events) {
            r.ts = start + offset;
            r.event_kind = kind;
            records.push_back(r);
        }
        r.ts = trip.list.end_ts;
        r.event_kind = ingest::EventKind::KeyOff;
        records.push_back(r);
        trip.span_end = records.size() - 1;
        policy.trips.push_back(trip);
    }
};

std::vector<EventArrival> exact_power_law(double beta, int n, double scale = 1.0) {
    // t_k = scale * k^(1/beta) makes ln k = beta ln t - beta ln scale exactly.
    std::vector<EventArrival> out;
    for (int k = 1; k <= n; ++k) {
        EventArrival a;
        a.policy_id = "P";
        a.event_type = EventType::Severe;
        a.rank_k = k;
        a.cum_time_t = scale * std::pow(static_cast<double>(k), 1.0 / beta);
        out.push_back(a);
    }
    return out;
}

} // namespace

TEST_CASE("one brake event at minute 30 of a 60-minute trip") {
    Fixture f;
    f.policy.policy_id = "P1";
    f.add_trip(0, {{1800, ingest::EventKind::HarshBrake}});
    SequenceStats stats;
    auto arrivals = build_event_sequences(f.policy, f.records, stats);
    REQUIRE(arrivals.size() == 1);
    CHECK(arrivals[0].event_type == EventType::Brake);
    CHECK(arrivals[0].rank_k == 1);
    CHECK(arrivals[0].cum_time_t == doctest::Approx(0.5));
    CHECK(stats.events_outside_trips == 0);
}

TEST_CASE("cumulative time accrues only during trips") {
    Fixture f;
    f.policy.policy_id = "P1";
    f.add_trip(0, {});
    // Long gap before trip 2; event 10 minutes in -> 70/60 hours cumulative.
    f.add_trip(100000, {{600, ingest::EventKind::HarshAccel}});
    SequenceStats stats;
    auto arrivals = build_event_sequences(f.policy, f.records, stats);
    REQUIRE(arrivals.size() == 1);
    CHECK(arrivals[0].cum_time_t == doctest::Approx(70.0 / 60.0));
}

TEST_CASE("distance-based accrual prorates within the trip") {
    Fixture f;
    f.policy.policy_id = "P1";
    f.add_trip(0, {}, 3600.0, 50.0);
    f.add_trip(100000, {{900, ingest::EventKind::HarshLeft}}, 3600.0, 40.0);
    SequenceStats stats;
    auto arrivals = build_event_sequences(f.policy, f.records, stats, /*by_distance=*/true);
    REQUIRE(arrivals.size() == 1);
    CHECK(arrivals[0].cum_time_t == doctest::Approx(50.0 + 0.25 * 40.0));
}

TEST_CASE("ranks ascend with time per type, independent of record order") {
    Fixture f;
    f.policy.policy_id = "P1";
    f.add_trip(0, {{1200, ingest::EventKind::HarshBrake},
                   {600, ingest::EventKind::HarshBrake},   // listed out of order
                   {1800, ingest::EventKind::HarshAccel},
                   {900, ingest::EventKind::HarshBrake}});
    SequenceStats stats;
    auto arrivals = build_event_sequences(f.policy, f.records, stats);
    REQUIRE(arrivals.size() == 4);
    double prev_t = -1;
    int prev_brake_rank = 0;
    for (const auto& a : arrivals) {
        CHECK(a.cum_time_t >= prev_t);
        prev_t = a.cum_time_t;
        if (a.event_type == EventType::Brake) {
            CHECK(a.rank_k == prev_brake_rank + 1);
            prev_brake_rank = a.rank_k;
        }
    }
    CHECK(prev_brake_rank == 3);
}

TEST_CASE("harsh records outside every trip span are counted") {
    Fixture f;
    f.policy.policy_id = "P1";
    f.add_trip(0, {});
    ingest::RawRecord stray;
    stray.device_id = "D";
    stray.ts = 999999;
    stray.event_kind = ingest::EventKind::SevereHarsh;
    f.records.push_back(stray);
    SequenceStats stats;
    auto arrivals = build_event_sequences(f.policy, f.records, stats);
    CHECK(arrivals.empty());
    CHECK(stats.events_total == 1);
    CHECK(stats.events_outside_trips == 1);
}

TEST_CASE("filter_min_occurrences keeps ranks attained by enough policies") {
    std::vector<EventArrival> arrivals;
    // Rank 1 of Brake attained by 5 policies, rank 2 by only 4.
    for (int p = 0; p < 5; ++p) {
        EventArrival a;
        a.policy_id = "P" + std::to_string(p);
        a.event_type = EventType::Brake;
        a.rank_k = 1;
        a.cum_time_t = 1.0 + p;
        arrivals.push_back(a);
        if (p < 4) {
            a.rank_k = 2;
            a.cum_time_t = 2.0 + p;
            arrivals.push_back(a);
        }
    }
    auto kept = filter_min_occurrences(arrivals, 5);
    CHECK(kept.size() == 5);
    for (const auto& a : kept) CHECK(a.rank_k == 1);
    // min_count = 1 is the identity.
    CHECK(filter_min_occurrences(arrivals, 1).size() == arrivals.size());
}

TEST_CASE("fit_loglog is exact on noiseless power laws") {
    // t_k = k^2  <=>  k = t^0.5.
    auto fit = fit_loglog(exact_power_law(0.5, 40));
    CHECK(fit.beta == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(fit.alpha == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fit.se_beta < 1e-9);

    // Directly proportional: beta = 1.
    CHECK(fit_loglog(exact_power_law(1.0, 25)).beta == doctest::Approx(1.0).epsilon(1e-9));

    // Any noiseless t_k = A k^{1/beta} is exact.
    for (double beta : {0.3, 0.7, 1.4}) {
        auto f = fit_loglog(exact_power_law(beta, 30, 2.5));
        CHECK(f.beta == doctest::Approx(beta).epsilon(1e-9));
        CHECK(f.r_squared == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("rescaling time shifts alpha by -beta ln(lambda), beta unchanged") {
    auto base = exact_power_law(0.5, 30);
    // Add mild irregularity so the fit is not trivially exact.
    for (std::size_t i = 0; i < base.size(); ++i)
        base[i].cum_time_t *= 1.0 + 0.01 * static_cast<double>(i % 3);
    auto f1 = fit_loglog(base);
    const double lambda = 3.7;
    auto scaled = base;
    for (auto& a : scaled) a.cum_time_t *= lambda;
    auto f2 = fit_loglog(scaled);
    CHECK(f2.beta == doctest::Approx(f1.beta).epsilon(1e-9));
    CHECK(f2.alpha == doctest::Approx(f1.alpha - f1.beta * std::log(lambda)).epsilon(1e-9));
}

TEST_CASE("fit_loglog input validation") {
    CHECK_THROWS_AS(fit_loglog(exact_power_law(0.5, 2)), NumericError);
    auto bad = exact_power_law(0.5, 5);
    bad[0].cum_time_t = 0.0;
    CHECK_THROWS_AS(fit_loglog(bad), NumericError);
}

TEST_CASE("second derivative coefficients") {
    CHECK(second_derivative_coeffs({0.0, 0.5, 0, 0, 0, 0}).c == doctest::Approx(-0.25));
    CHECK(second_derivative_coeffs({0.0, 0.5, 0, 0, 0, 0}).p == doctest::Approx(-1.5));
    CHECK(second_derivative_coeffs({2.0, 1.0, 0, 0, 0, 0}).c == 0.0); // linear: no curvature

    // p = beta - 2 identically.
    for (double beta : {0.1, 0.4430, 0.9, 1.7})
        CHECK(second_derivative_coeffs({0.3, beta, 0, 0, 0, 0}).p == beta - 2.0);

    // Published cross-check: beta = 0.4430 gives p = -1.5570, and the
    // reference table's -1.5571 agrees within rounding.
    const double p = second_derivative_coeffs({0.0, 0.4430, 0, 0, 0, 0}).p;
    CHECK(p == doctest::Approx(-1.5570).epsilon(1e-9));
    CHECK(std::abs(p - (-1.5571)) < 1e-3);
}

TEST_CASE("age bands split at 40 and 60") {
    CHECK(age_group_for(39) == AgeGroup::Young);
    CHECK(age_group_for(40) == AgeGroup::Mid);
    CHECK(age_group_for(59) == AgeGroup::Mid);
    CHECK(age_group_for(60) == AgeGroup::Old);
}

TEST_CASE("age-interaction fit recovers per-group exponents") {
    // Identical data replicated across groups -> equal betas.
    {
        std::vector<EventArrival> arrivals;
        for (int g = 0; g < 3; ++g)
            for (auto a : exact_power_law(0.5, 20)) {
                a.age_group = static_cast<AgeGroup>(g);
                arrivals.push_back(a);
            }
        auto fit = fit_loglog_age(arrivals);
        REQUIRE(fit.slopes[0].has_value());
        REQUIRE(fit.slopes[1].has_value());
        REQUIRE(fit.slopes[2].has_value());
        CHECK(fit.slopes[0]->beta == doctest::Approx(fit.slopes[1]->beta).epsilon(1e-9));
        CHECK(fit.slopes[1]->beta == doctest::Approx(fit.slopes[2]->beta).epsilon(1e-9));
        CHECK(fit.slopes[0]->beta == doctest::Approx(0.5).epsilon(1e-6));
    }
    // Distinct noiseless exponents with a shared (zero) intercept.
    {
        const double betas[3] = {0.3, 0.5, 0.7};
        std::vector<EventArrival> arrivals;
        for (int g = 0; g < 3; ++g)
            for (auto a : exact_power_law(betas[g], 25)) {
                a.age_group = static_cast<AgeGroup>(g);
                arrivals.push_back(a);
            }
        auto fit = fit_loglog_age(arrivals);
        CHECK(fit.alpha == doctest::Approx(0.0).epsilon(1e-6));
        for (int g = 0; g < 3; ++g)
            CHECK(fit.slopes[static_cast<std::size_t>(g)]->beta ==
                  doctest::Approx(betas[g]).epsilon(1e-6));
    }
    // A group absent from the data is omitted, not an error.
    {
        std::vector<EventArrival> arrivals;
        for (auto a : exact_power_law(0.5, 10)) {
            a.age_group = AgeGroup::Young;
            arrivals.push_back(a);
        }
        auto fit = fit_loglog_age(arrivals);
        CHECK(fit.slopes[0].has_value());
        CHECK_FALSE(fit.slopes[1].has_value());
        CHECK_FALSE(fit.slopes[2].has_value());
    }
    // Rows without an age group are an error.
    {
        auto arrivals = exact_power_law(0.5, 10);
        CHECK_THROWS_AS(fit_loglog_age(arrivals), DataError);
    }
}

TEST_CASE("learning report covers population x filter x type") {
    std::vector<EventArrival> arrivals;
    for (int p = 0; p < 6; ++p)
        for (auto a : exact_power_law(0.5, 10)) {
            a.policy_id = "P" + std::to_string(p);
            a.claim_group = p < 3 ? ClaimGroup::Claimed : ClaimGroup::NoClaim;
            arrivals.push_back(a);
        }
    const std::string csv = learning_report_csv(arrivals);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "population,rank_filter,event_type,n_points,alpha,beta,se_beta,r_squared,c,p");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 30); // 3 populations x 2 filters x 5 event types
    CHECK(csv.find("severe") != std::string::npos);
    CHECK(csv.find("claimed") != std::string::npos);
}
