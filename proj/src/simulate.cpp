#include "telem/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "telem/errors.hpp"
#include "telem/time.hpp"

namespace telem::simulate {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Integer speed sampled inside a bin; the final open bin reuses the width.
int sample_bin_speed(int bin, const features::BinConfig& cfg, std::mt19937_64& rng) {
    if (bin == 0) return 0;
    const double lo = cfg.boundaries[static_cast<std::size_t>(bin)];
    const double hi = bin + 1 < cfg.m ? cfg.boundaries[static_cast<std::size_t>(bin) + 1]
                                      : lo + cfg.width_h;
    const int lo_i = std::max(1, static_cast<int>(std::ceil(lo)));
    const int hi_i = std::max(lo_i, static_cast<int>(std::ceil(hi)) - 1);
    return std::uniform_int_distribution<int>(lo_i, hi_i)(rng);
}

int sample_markov_step(const Eigen::MatrixXd& P, int state, std::mt19937_64& rng) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (int j = 0; j < P.cols(); ++j) {
        u -= P(state, j);
        if (u <= 0.0) return j;
    }
    return static_cast<int>(P.cols()) - 1;
}

int draw_nb_count(double mu, double theta, std::mt19937_64& rng) {
    double rate = mu;
    if (std::isfinite(theta))
        rate = std::gamma_distribution<double>(theta, mu / theta)(rng);
    if (rate <= 0.0) return 0;
    return std::poisson_distribution<int>(rate)(rng);
}

struct TripPlan {
    Timestamp start = 0;
    int minutes = 0;
};

struct EventAt {
    int second_offset; // within the trip
    ingest::EventKind kind;
};

} // namespace

void SimConfig::validate() const {
    if (n_policies <= 0) throw ConfigError("SimConfig: n_policies must be positive");
    if (trips_per_policy_mean <= 0 || trip_minutes_mean <= 0)
        throw ConfigError("SimConfig: trip distribution means must be positive");
    if (speed_markov.rows() != bin_config.m || speed_markov.cols() != bin_config.m)
        throw ConfigError("SimConfig: speed_markov shape must match the bin config");
    for (int i = 0; i < speed_markov.rows(); ++i) {
        double row = 0.0;
        for (int j = 0; j < speed_markov.cols(); ++j) {
            if (speed_markov(i, j) < 0.0) throw ConfigError("SimConfig: negative probability");
            row += speed_markov(i, j);
        }
        if (std::abs(row - 1.0) > 1e-12)
            throw ConfigError("SimConfig: speed_markov row does not sum to 1");
    }
    for (double r : harsh_rates)
        if (r < 0.0) throw ConfigError("SimConfig: negative harsh rate");
    if (severe_a < 0.0) throw ConfigError("SimConfig: severe_a must be non-negative");
    if (!(severe_learning_beta > 0.0 && severe_learning_beta <= 1.0))
        throw ConfigError("SimConfig: severe_learning_beta must lie in (0, 1]");
    if (!(theta > 0.0)) throw ConfigError("SimConfig: theta must be positive");
    for (double p : {defect_rates.out_of_order, defect_rates.invalid_gps,
                     defect_rates.missing_keyoff})
        if (p < 0.0 || p > 1.0) throw ConfigError("SimConfig: defect rates must lie in [0, 1]");
}

SimConfig SimConfig::defaults() {
    SimConfig cfg;
    const int m = cfg.bin_config.m;
    cfg.speed_markov = Eigen::MatrixXd::Zero(m, m);
    // Banded random walk: stay with probability 1/2, step one bin otherwise.
    for (int i = 0; i < m; ++i) {
        const int lo = std::max(0, i - 1);
        const int hi = std::min(m - 1, i + 1);
        cfg.speed_markov(i, i) += 0.5;
        cfg.speed_markov(i, lo) += 0.25;
        cfg.speed_markov(i, hi) += 0.25;
    }
    return cfg;
}

Portfolio simulate_portfolio(const SimConfig& cfg) {
    cfg.validate();
    const Timestamp coverage_start = *parse_timestamp("01/01/2018 00:00:00");
    const Timestamp coverage_end = coverage_start + 365 * kSecondsPerDay;
    const Timestamp usable_span = 360 * kSecondsPerDay;

    Portfolio out;
    out.truth.transition = cfg.speed_markov;
    out.truth.transitions_per_policy = std::numeric_limits<std::size_t>::max();

    for (int p = 0; p < cfg.n_policies; ++p) {
        // Double mixing keeps nearby portfolio seeds from aliasing into each
        // other's per-policy streams.
        std::mt19937_64 rng(splitmix64(splitmix64(cfg.seed) + static_cast<std::uint64_t>(p)));
        PolicyMeta meta;
        {
            char buf[16];
            std::snprintf(buf, sizeof buf, "P%04d", p + 1);
            meta.policy_id = buf;
            std::snprintf(buf, sizeof buf, "20%05d", 22000 + p + 1);
            meta.device_id = buf;
        }
        meta.coverage_start = coverage_start;
        meta.coverage_end = coverage_end;
        meta.age = std::uniform_int_distribution<int>(20, 75)(rng);
        for (double coef : cfg.cov_coefs) {
            (void)coef;
            meta.covs.push_back(std::normal_distribution<double>(0.0, 1.0)(rng));
        }

        const int n_trips = std::max(
            1, std::poisson_distribution<int>(cfg.trips_per_policy_mean)(rng));
        std::vector<TripPlan> plans(static_cast<std::size_t>(n_trips));
        const Timestamp slot = usable_span / n_trips;
        for (int t = 0; t < n_trips; ++t) {
            auto& plan = plans[static_cast<std::size_t>(t)];
            plan.minutes = std::max(5, std::poisson_distribution<int>(cfg.trip_minutes_mean)(rng));
            const Timestamp slack = std::max<Timestamp>(1, slot - 60 * plan.minutes - 120);
            plan.start = coverage_start + static_cast<Timestamp>(t) * slot +
                         std::uniform_int_distribution<Timestamp>(0, slack - 1)(rng);
        }

        // Severe events over cumulative driving hours: Lambda(t) = a t^beta.
        double total_hours = 0.0;
        for (const auto& plan : plans) total_hours += plan.minutes / 60.0;
        std::vector<double> severe_t;
        if (cfg.severe_a > 0.0) {
            double s = 0.0;
            for (;;) {
                s += std::exponential_distribution<double>(1.0)(rng);
                const double t = std::pow(s / cfg.severe_a, 1.0 / cfg.severe_learning_beta);
                if (t >= total_hours) break;
                severe_t.push_back(t);
            }
        }
        out.truth.severe_times_h.push_back(severe_t);

        // Walk the trips, emitting the record stream and the trip list.
        std::size_t severe_idx = 0;
        double hours_before = 0.0;
        std::size_t policy_transitions = 0;
        for (const auto& plan : plans) {
            const double duration_s = 60.0 * plan.minutes;
            std::vector<EventAt> events;
            static constexpr ingest::EventKind kHarshKinds[4] = {
                ingest::EventKind::HarshAccel, ingest::EventKind::HarshBrake,
                ingest::EventKind::HarshLeft, ingest::EventKind::HarshRight};
            for (int k = 0; k < 4; ++k) {
                const double rate = cfg.harsh_rates[static_cast<std::size_t>(k)] * plan.minutes;
                if (rate <= 0.0) continue;
                const int n = std::poisson_distribution<int>(rate)(rng);
                for (int e = 0; e < n; ++e) {
                    const int minute =
                        std::uniform_int_distribution<int>(0, plan.minutes - 1)(rng);
                    const int within = std::uniform_int_distribution<int>(7, 53)(rng);
                    events.push_back({minute * 60 + within, kHarshKinds[k]});
                }
            }
            while (severe_idx < severe_t.size() &&
                   severe_t[severe_idx] < hours_before + plan.minutes / 60.0) {
                int offset =
                    static_cast<int>(std::lround((severe_t[severe_idx] - hours_before) * 3600.0));
                offset = std::clamp(offset, 0, plan.minutes * 60 - 1);
                const int within = std::clamp(offset % 60, 7, 53);
                events.push_back({(offset / 60) * 60 + within, ingest::EventKind::SevereHarsh});
                ++severe_idx;
            }
            std::stable_sort(events.begin(), events.end(),
                             [](const EventAt& a, const EventAt& b) {
                                 return a.second_offset < b.second_offset;
                             });
            std::set<int> used;
            for (auto& e : events) // events must not share a timestamp
                while (!used.insert(e.second_offset).second) ++e.second_offset;
            std::stable_sort(events.begin(), events.end(),
                             [](const EventAt& a, const EventAt& b) {
                                 return a.second_offset < b.second_offset;
                             });

            double distance_km = 0.0;
            double max_speed = 0.0;
            int state =
                std::uniform_int_distribution<int>(0, cfg.bin_config.m - 1)(rng);
            std::size_t next_event = 0;
            const auto emit = [&](Timestamp ts, double speed, ingest::EventKind kind) {
                ingest::RawRecord rec;
                rec.device_id = meta.device_id;
                rec.ts = ts;
                rec.gps_direction =
                    std::uniform_int_distribution<int>(0, 359)(rng);
                rec.gps_speed = speed;
                rec.event_kind = kind;
                out.records.push_back(std::move(rec));
            };
            int speed = sample_bin_speed(state, cfg.bin_config, rng);
            emit(plan.start, speed, ingest::EventKind::KeyOn);
            for (int minute = 1; minute <= plan.minutes; ++minute) {
                // Events inside the elapsed minute travel at its speed.
                while (next_event < events.size() &&
                       events[next_event].second_offset < minute * 60) {
                    emit(plan.start + events[next_event].second_offset, speed,
                         events[next_event].kind);
                    ++next_event;
                }
                distance_km += speed / 60.0;
                max_speed = std::max(max_speed, static_cast<double>(speed));
                state = sample_markov_step(cfg.speed_markov, state, rng);
                ++policy_transitions;
                speed = sample_bin_speed(state, cfg.bin_config, rng);
                emit(plan.start + 60 * minute, speed,
                     minute == plan.minutes ? ingest::EventKind::KeyOff
                                            : ingest::EventKind::PositionInTime);
            }

            ingest::TripListEntry entry;
            entry.device_id = meta.device_id;
            entry.start_ts = plan.start;
            entry.end_ts = plan.start + 60 * plan.minutes;
            entry.distance_km = distance_km;
            entry.duration_s = duration_s;
            entry.avg_speed = distance_km / (duration_s / 3600.0);
            entry.max_speed = max_speed;
            double simplex[4], total = 0.0;
            for (double& v : simplex) {
                v = std::exponential_distribution<double>(1.0)(rng);
                total += v;
            }
            for (int r = 0; r < 4; ++r) entry.roadtype_props[r] = 100.0 * simplex[r] / total;
            out.trips.push_back(std::move(entry));
            hours_before += plan.minutes / 60.0;
        }

        const double lin = cfg.claim_intercept + cfg.exposure_coef * std::log(total_hours) +
                           std::inner_product(cfg.cov_coefs.begin(), cfg.cov_coefs.end(),
                                              meta.covs.begin(), 0.0);
        const double mu = std::exp(lin);
        meta.claims = draw_nb_count(mu, cfg.theta, rng);
        out.truth.mu.push_back(mu);
        out.truth.claims.push_back(meta.claims);
        out.truth.exposure_hours.push_back(total_hours);
        out.truth.transitions_per_policy =
            std::min(out.truth.transitions_per_policy, policy_transitions);
        out.policies.push_back(std::move(meta));
    }

    DefectManifest manifest;
    out.records = inject_defects(out.records, cfg.defect_rates,
                                 splitmix64(splitmix64(cfg.seed) ^ 0xdefec7ULL),
                                 manifest);
    return out;
}

std::vector<ingest::RawRecord> inject_defects(const std::vector<ingest::RawRecord>& clean,
                                              const DefectRates& rates, std::uint64_t seed,
                                              DefectManifest& manifest) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<ingest::RawRecord> out;
    out.reserve(clean.size());

    // Calibration windows and missing KEY OFFs first, on the clean ordering.
    for (const auto& rec : clean) {
        if (rec.event_kind == ingest::EventKind::KeyOff && rates.missing_keyoff > 0.0 &&
            unit(rng) < rates.missing_keyoff) {
            ++manifest.keyoffs_removed;
            continue;
        }
        out.push_back(rec);
        if (rec.event_kind == ingest::EventKind::KeyOn && rates.invalid_gps > 0.0 &&
            unit(rng) < rates.invalid_gps) {
            ingest::RawRecord fix;
            fix.device_id = rec.device_id;
            fix.ts = rec.ts + 3;
            fix.gps_speed = 0.0;
            fix.gps_direction = 0.0;
            fix.event_kind = ingest::EventKind::FixGpsOk;
            fix.gps_valid = false;
            out.push_back(std::move(fix));
            ++manifest.fixgps_inserted;
        }
    }

    if (rates.out_of_order > 0.0) {
        std::vector<ingest::RawRecord> shuffled;
        shuffled.reserve(out.size());
        std::size_t i = 0;
        std::vector<ingest::RawRecord> held; // displaced block awaiting reinsertion
        std::size_t reinsert_after = 0;
        while (i < out.size()) {
            if (held.empty() && out.size() - i > 4 && unit(rng) < rates.out_of_order) {
                const std::size_t len =
                    std::uniform_int_distribution<std::size_t>(2, 4)(rng);
                manifest.displaced_blocks.emplace_back(i, len);
                for (std::size_t j = 0; j < len; ++j) held.push_back(out[i + j]);
                i += len;
                reinsert_after =
                    shuffled.size() + len + std::uniform_int_distribution<std::size_t>(2, 6)(rng);
                continue;
            }
            shuffled.push_back(out[i++]);
            if (!held.empty() && shuffled.size() >= reinsert_after) {
                for (auto& r : held) shuffled.push_back(std::move(r));
                held.clear();
            }
        }
        for (auto& r : held) shuffled.push_back(std::move(r));
        out = std::move(shuffled);
    }
    return out;
}

std::string raw_records_text(const std::vector<ingest::RawRecord>& records) {
    std::ostringstream s;
    s << "DeviceId\tTimeStamp\tGPSDirection\tGPSSpeed\tEventDescription\n";
    for (const auto& r : records) {
        s << r.device_id << '\t' << format_timestamp(r.ts) << '\t'
          << static_cast<long long>(r.gps_direction) << '\t'
          << static_cast<long long>(r.gps_speed) << '\t' << ingest::event_kind_name(r.event_kind)
          << '\n';
    }
    return s.str();
}

std::string trip_list_text(const std::vector<ingest::TripListEntry>& entries) {
    std::ostringstream s;
    s.precision(10);
    s << "DeviceId\tStartTime\tEndTime\tDistanceKm\tDurationS\tAvgSpeed\tMaxSpeed"
      << "\tPropUrban\tPropExtraUrban\tPropHighway\tPropOther\n";
    for (const auto& e : entries) {
        s << e.device_id << '\t' << format_timestamp(e.start_ts) << '\t'
          << format_timestamp(e.end_ts) << '\t' << e.distance_km << '\t' << e.duration_s << '\t'
          << e.avg_speed << '\t' << e.max_speed;
        for (double v : e.roadtype_props) s << '\t' << v;
        s << '\n';
    }
    return s.str();
}

std::string policy_table_text(const std::vector<PolicyMeta>& policies) {
    std::ostringstream s;
    s.precision(10);
    s << "policy_id,device_id,coverage_start,coverage_end,claims,age";
    const std::size_t n_covs = policies.empty() ? 0 : policies.front().covs.size();
    for (std::size_t c = 0; c < n_covs; ++c) s << ",cov" << c + 1;
    s << '\n';
    for (const auto& p : policies) {
        s << p.policy_id << ',' << p.device_id << ',' << format_timestamp(p.coverage_start) << ','
          << format_timestamp(p.coverage_end) << ',' << p.claims << ',' << p.age;
        for (double v : p.covs) s << ',' << v;
        s << '\n';
    }
    return s.str();
}

std::string ground_truth_json(const SimConfig& cfg, const GroundTruth& truth) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["n_policies"] = cfg.n_policies;
    j["bin_width"] = cfg.bin_config.width_h;
    j["claim_intercept"] = cfg.claim_intercept;
    j["exposure_coef"] = cfg.exposure_coef;
    j["cov_coefs"] = cfg.cov_coefs;
    j["theta"] = std::isfinite(cfg.theta) ? nlohmann::json(cfg.theta) : nlohmann::json("inf");
    j["severe_a"] = cfg.severe_a;
    j["severe_learning_beta"] = cfg.severe_learning_beta;
    std::vector<std::vector<double>> matrix;
    for (int i = 0; i < truth.transition.rows(); ++i) {
        matrix.emplace_back();
        for (int c = 0; c < truth.transition.cols(); ++c)
            matrix.back().push_back(truth.transition(i, c));
    }
    j["transition"] = matrix;
    j["mu"] = truth.mu;
    j["claims"] = truth.claims;
    j["exposure_hours"] = truth.exposure_hours;
    j["min_transitions_per_policy"] = truth.transitions_per_policy;
    return j.dump(2);
}

} // namespace telem::simulate
