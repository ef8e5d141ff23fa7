#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "telem/errors.hpp"
#include "telem/features.hpp"
#include "telem/pca.hpp"
#include "telem/time.hpp"

using namespace telem;
using namespace telem::features;

namespace {

ingest::Trip make_trip(Timestamp start, double duration_s, double distance_km = 10.0,
                       double avg = 50.0, double maxv = 90.0) {
    ingest::Trip t;
    t.list.start_ts = start;
    t.list.end_ts = start + static_cast<Timestamp>(duration_s);
    t.list.duration_s = duration_s;
    t.list.distance_km = distance_km;
    t.list.avg_speed = avg;
    t.list.max_speed = maxv;
    return t;
}

} // namespace

TEST_CASE("bin layout follows the width rule") {
    // 15 bins at the default width.
    auto c10 = BinConfig::for_width(10);
    CHECK(c10.m == 15);
    REQUIRE(c10.boundaries.size() == 15);
    CHECK(c10.boundaries[0] == 0.0);
    CHECK(c10.boundaries[1] == 0.5);
    CHECK(c10.boundaries[2] == 10.0);
    CHECK(c10.boundaries[14] == 130.0);

    auto c26 = BinConfig::for_width(26);
    CHECK(c26.m == 7);
    CHECK(c26.boundaries.back() == 130.0);

    auto c27 = BinConfig::for_width(27);
    CHECK(c27.m == 6);
    CHECK(c27.boundaries.back() == 108.0);

    for (int h = 2; h <= 30; ++h) CHECK(BinConfig::for_width(h).m == 130 / h + 2);
    CHECK_THROWS_AS(BinConfig::for_width(1), ConfigError);
    CHECK_THROWS_AS(BinConfig::for_width(31), ConfigError);
}

TEST_CASE("speed_bin_index respects the half-open bin edges") {
    auto cfg = BinConfig::for_width(10);
    CHECK(speed_bin_index(0.0, cfg) == 0);
    CHECK(speed_bin_index(0.49, cfg) == 0);
    CHECK(speed_bin_index(0.5, cfg) == 1);
    CHECK(speed_bin_index(9.99, cfg) == 1);
    CHECK(speed_bin_index(10.0, cfg) == 2);
    CHECK(speed_bin_index(129.9, cfg) == 13);
    CHECK(speed_bin_index(130.0, cfg) == 14);
    CHECK(speed_bin_index(500.0, cfg) == 14); // open-ended top bin
    CHECK_THROWS_AS(speed_bin_index(-1.0, cfg), ConfigError);
}

TEST_CASE("harsh-event rescaling: intermediate observation splits the minute") {
    // Observation at 0 s, a harsh event at 20 s, observation at 60 s:
    // weights 60/20 = 3.0 and 60/40 = 1.5.
    auto cfg = BinConfig::for_width(10);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(cfg.m, cfg.m);
    AccumulateStats stats;
    accumulate_transitions({{0, 35.0}, {20, 62.0}, {60, 41.0}}, cfg, w, stats);
    CHECK(stats.pairs == 2);
    CHECK(w(speed_bin_index(35, cfg), speed_bin_index(62, cfg)) == 3.0);
    CHECK(w(speed_bin_index(62, cfg), speed_bin_index(41, cfg)) == 1.5);
    CHECK(w.sum() == 4.5);
}

TEST_CASE("plain minute steps carry weight 1; non-positive gaps are skipped") {
    auto cfg = BinConfig::for_width(10);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(cfg.m, cfg.m);
    AccumulateStats stats;
    accumulate_transitions({{0, 20.0}, {60, 30.0}, {60, 40.0}, {55, 50.0}, {115, 60.0}}, cfg, w,
                           stats);
    CHECK(w(speed_bin_index(20, cfg), speed_bin_index(30, cfg)) == 1.0);
    CHECK(stats.skipped_nonpositive_gap == 2); // dt = 0 and dt = -5
    CHECK(w(speed_bin_index(50, cfg), speed_bin_index(60, cfg)) == 1.0);
}

TEST_CASE("accumulate_transitions matches a brute-force loop on random data") {
    std::mt19937_64 rng(3);
    auto cfg = BinConfig::for_width(7);
    std::vector<std::pair<Timestamp, double>> obs;
    Timestamp ts = 0;
    for (int i = 0; i < 400; ++i) {
        ts += static_cast<Timestamp>(rng() % 120); // occasionally zero: skipped
        obs.push_back({ts, static_cast<double>(rng() % 160)});
    }
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(cfg.m, cfg.m);
    AccumulateStats stats;
    accumulate_transitions(obs, cfg, w, stats);
    Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(cfg.m, cfg.m);
    for (std::size_t i = 1; i < obs.size(); ++i) {
        const double dt = static_cast<double>(obs[i].first - obs[i - 1].first);
        if (dt <= 0) continue;
        oracle(speed_bin_index(obs[i - 1].second, cfg), speed_bin_index(obs[i].second, cfg)) +=
            60.0 / dt;
    }
    CHECK((w - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normalize_matrix yields row-stochastic visited rows and zero elsewhere") {
    auto cfg = BinConfig::for_width(26);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(cfg.m, cfg.m);
    w(1, 2) = 3.0;
    w(1, 1) = 1.0;
    w(4, 0) = 0.25;
    auto stm = normalize_matrix(w, cfg);
    CHECK(stm.visited_rows[1]);
    CHECK(stm.visited_rows[4]);
    CHECK_FALSE(stm.visited_rows[0]);
    CHECK(stm.probs.row(1).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(stm.probs(1, 2) == doctest::Approx(0.75));
    CHECK(stm.probs(4, 0) == doctest::Approx(1.0));
    CHECK(stm.probs.row(0).sum() == 0.0);

    // Flatten is row-major.
    auto flat = stm.flatten();
    REQUIRE(flat.size() == cfg.m * cfg.m);
    CHECK(flat[1 * cfg.m + 2] == doctest::Approx(0.75));
}

TEST_CASE("trip_observations uses only gps-valid records inside the span") {
    std::vector<ingest::RawRecord> records;
    for (int i = 0; i < 6; ++i) {
        ingest::RawRecord r;
        r.device_id = "D";
        r.ts = 60 * i;
        r.gps_speed = 10.0 * i;
        r.event_kind = ingest::EventKind::PositionInTime;
        records.push_back(r);
    }
    records[2].gps_valid = false;
    ingest::Trip trip = make_trip(60, 240);
    trip.span_begin = 1;
    trip.span_end = 4;
    auto obs = trip_observations(trip, records);
    REQUIRE(obs.size() == 3); // records 1, 3, 4
    CHECK(obs[0].second == 10.0);
    CHECK(obs[1].second == 30.0);

    trip.inverted_span = true;
    CHECK(trip_observations(trip, records).empty());
}

TEST_CASE("timeslot proportions split trips across slot and midnight boundaries") {
    const Timestamp day_start = 1000 * kSecondsPerDay;

    // Entirely inside slot 2 (08:00-12:00).
    {
        auto t = make_trip(day_start + 9 * 3600, 3600);
        auto p = timeslot_proportions({t});
        CHECK(p[2] == doctest::Approx(100.0));
    }
    // Half in slot 0 (00:00-04:00), half in slot 1 (04:00-08:00).
    {
        auto t = make_trip(day_start + 3 * 3600, 2 * 3600);
        auto p = timeslot_proportions({t});
        CHECK(p[0] == doctest::Approx(50.0));
        CHECK(p[1] == doctest::Approx(50.0));
    }
    // Crossing midnight: 23:00-01:00 -> slot 5 and slot 0.
    {
        auto t = make_trip(day_start + 23 * 3600, 2 * 3600);
        auto p = timeslot_proportions({t});
        CHECK(p[5] == doctest::Approx(50.0));
        CHECK(p[0] == doctest::Approx(50.0));
    }
    // Mixed trips always sum to 100.
    {
        std::mt19937_64 rng(9);
        std::vector<ingest::Trip> trips;
        for (int i = 0; i < 40; ++i)
            trips.push_back(make_trip(day_start + static_cast<Timestamp>(rng() % (3 * 86400)),
                                      300 + static_cast<double>(rng() % 20000)));
        auto p = timeslot_proportions(trips);
        double total = 0;
        for (double v : p) total += v;
        CHECK(total == doctest::Approx(100.0).epsilon(1e-9));
    }
    CHECK_THROWS_AS(timeslot_proportions({}), NumericError);
}

TEST_CASE("classify_trip_timeslot applies the final-hour grace rule") {
    const Timestamp day = 1000 * kSecondsPerDay;
    // Start mid-slot: the start slot wins regardless of the end.
    CHECK(classify_trip_timeslot(day + 1 * 3600, day + 9 * 3600) == 0);
    // Start in the final hour of slot 0 (03:00-04:00), end 10 min past the
    // boundary: stays in slot 0.
    CHECK(classify_trip_timeslot(day + 3 * 3600 + 1800, day + 4 * 3600 + 600) == 0);
    // Same start, end 16 min past the boundary: moves to slot 1.
    CHECK(classify_trip_timeslot(day + 3 * 3600 + 1800, day + 4 * 3600 + 960) == 1);
    // Exactly 15 min past the boundary stays.
    CHECK(classify_trip_timeslot(day + 3 * 3600 + 1800, day + 4 * 3600 + 900) == 0);
    // Final hour of the last slot wraps to slot 0.
    CHECK(classify_trip_timeslot(day + 23 * 3600 + 1800, day + 24 * 3600 + 1200) == 0);
}

TEST_CASE("policy aggregates match a brute-force computation") {
    std::mt19937_64 rng(17);
    std::vector<ingest::Trip> trips;
    for (int i = 0; i < 30; ++i) {
        auto t = make_trip(1000 * kSecondsPerDay + i * 7200, 300 + static_cast<double>(rng() % 3000),
                           1 + static_cast<double>(rng() % 40), 20 + static_cast<double>(rng() % 80),
                           40 + static_cast<double>(rng() % 100));
        t.harsh.accel = static_cast<int>(rng() % 3);
        t.harsh.brake = static_cast<int>(rng() % 3);
        t.harsh.left = static_cast<int>(rng() % 2);
        t.harsh.right = static_cast<int>(rng() % 2);
        t.harsh.severe = static_cast<int>(rng() % 2);
        double props[4], total = 0;
        for (double& v : props) {
            v = 1 + static_cast<double>(rng() % 100);
            total += v;
        }
        for (int r = 0; r < 4; ++r) t.list.roadtype_props[r] = 100.0 * props[r] / total;
        trips.push_back(t);
    }
    auto s = policy_aggregates(trips);

    double dist = 0, dur = 0, wavg = 0, maxv = 0, road[4] = {0, 0, 0, 0};
    int acc = 0, brake = 0, severe = 0;
    for (const auto& t : trips) {
        dist += t.list.distance_km;
        dur += t.list.duration_s;
        wavg += t.list.avg_speed * t.list.duration_s;
        maxv = std::max(maxv, t.list.max_speed);
        acc += t.harsh.accel;
        brake += t.harsh.brake;
        severe += t.harsh.severe;
        for (int r = 0; r < 4; ++r) road[r] += t.list.roadtype_props[r] * t.list.duration_s;
    }
    CHECK(s.num_trips == 30);
    CHECK(s.total_distance == doctest::Approx(dist));
    CHECK(s.total_time == doctest::Approx(dur / 60.0)); // minutes
    CHECK(s.avg_speed == doctest::Approx(wavg / dur));
    CHECK(s.max_speed == doctest::Approx(maxv));
    CHECK(s.num_acc == acc);
    CHECK(s.num_brake == brake);
    CHECK(s.num_severe == severe);
    for (int r = 0; r < 4; ++r)
        CHECK(s.prop_roadtype[static_cast<std::size_t>(r)] == doctest::Approx(road[r] / dur));
}

TEST_CASE("PCA agrees with a Gram-matrix eigendecomposition oracle") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 40, d = 8;
    Eigen::MatrixXd X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = gauss(rng) * (j + 1); // anisotropic

    auto model = pca::fit(X);
    REQUIRE(model.loadings.cols() == d);
    CHECK_FALSE(model.degenerate);

    // Oracle: eigenvalues/vectors of the sample covariance.
    Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    for (int c = 0; c < d; ++c) {
        const double oracle_var = eig.eigenvalues()[d - 1 - c]; // descending
        CHECK(model.explained_variance[c] == doctest::Approx(oracle_var).epsilon(1e-9));
        // Loadings match up to sign.
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
        const double dot = std::abs(v.dot(model.loadings.col(c)));
        CHECK(dot == doctest::Approx(1.0).epsilon(1e-9));
    }

    // Variances are non-increasing, loadings orthonormal.
    for (int c = 1; c < d; ++c)
        CHECK(model.explained_variance[c] <= model.explained_variance[c - 1] + 1e-12);
    Eigen::MatrixXd gram = model.loadings.transpose() * model.loadings;
    CHECK((gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-9);

    // Sign convention: the largest-magnitude entry of each loading is positive.
    for (int c = 0; c < d; ++c) {
        Eigen::Index arg;
        model.loadings.col(c).cwiseAbs().maxCoeff(&arg);
        CHECK(model.loadings(arg, c) > 0.0);
    }

    // Projection reproduces centered coordinates.
    Eigen::VectorXd score = pca::project(X.row(0).transpose(), model, d);
    Eigen::VectorXd recon = model.mean + model.loadings * score;
    CHECK((recon - X.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-9);

    CHECK_THROWS_AS(pca::project(X.row(0).transpose(), model, d + 1), ConfigError);
}

TEST_CASE("PCA handles the degenerate all-identical case") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(10, 4) * 3.25;
    auto model = pca::fit(X);
    CHECK(model.degenerate);
    CHECK(model.explained_variance.maxCoeff() <= 1e-12);
}

TEST_CASE("PCA projection variance equals the explained variance") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 200, d = 5;
    Eigen::MatrixXd X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = gauss(rng) + (j == 0 ? 3.0 * gauss(rng) : 0.0);
    auto model = pca::fit(X);
    for (int c = 0; c < 2; ++c) {
        double mean = 0, ss = 0;
        std::vector<double> scores;
        for (int i = 0; i < n; ++i) {
            const double s = pca::project(X.row(i).transpose(), model, 2)[c];
            scores.push_back(s);
            mean += s;
        }
        mean /= n;
        for (double s : scores) ss += (s - mean) * (s - mean);
        CHECK(ss / (n - 1) == doctest::Approx(model.explained_variance[c]).epsilon(1e-9));
        CHECK(std::abs(mean) < 1e-9); // scores are centered
    }
}
