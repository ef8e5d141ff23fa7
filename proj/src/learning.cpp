#include "telem/learning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "telem/errors.hpp"

namespace telem::learning {

const char* event_type_name(EventType type) {
    switch (type) {
    case EventType::Accel: return "accel";
    case EventType::Brake: return "brake";
    case EventType::Left: return "left";
    case EventType::Right: return "right";
    case EventType::Severe: return "severe";
    }
    return "?";
}

AgeGroup age_group_for(int age) {
    if (age < 40) return AgeGroup::Young;
    if (age < 60) return AgeGroup::Mid;
    return AgeGroup::Old;
}

namespace {

std::optional<EventType> event_type_of(ingest::EventKind kind) {
    switch (kind) {
    case ingest::EventKind::HarshAccel: return EventType::Accel;
    case ingest::EventKind::HarshBrake: return EventType::Brake;
    case ingest::EventKind::HarshLeft: return EventType::Left;
    case ingest::EventKind::HarshRight: return EventType::Right;
    case ingest::EventKind::SevereHarsh: return EventType::Severe;
    default: return std::nullopt;
    }
}

} // namespace

std::vector<EventArrival> build_event_sequences(const ingest::PolicyTrips& policy,
                                                const std::vector<ingest::RawRecord>& records,
                                                SequenceStats& stats, bool by_distance) {
    struct Pending {
        double t; // cumulative hours (or km)
        EventType type;
    };
    std::vector<Pending> pending;
    std::vector<bool> covered(records.size(), false);
    double cum_time = 0.0; // prior driving, in the chosen unit
    for (const ingest::Trip& trip : policy.trips) {
        if (!trip.inverted_span) {
            for (std::size_t i = trip.span_begin; i <= trip.span_end && i < records.size(); ++i) {
                covered[i] = true;
                const auto type = event_type_of(records[i].event_kind);
                if (!type) continue;
                double offset = static_cast<double>(records[i].ts - trip.list.start_ts);
                offset = std::clamp(offset, 0.0, trip.list.duration_s);
                const double frac = offset / trip.list.duration_s;
                const double within = by_distance ? frac * trip.list.distance_km
                                                  : offset / 3600.0;
                pending.push_back({cum_time + within, *type});
            }
        }
        cum_time += by_distance ? trip.list.distance_km : trip.list.duration_s / 3600.0;
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (event_type_of(records[i].event_kind)) {
            ++stats.events_total;
            if (!covered[i]) ++stats.events_outside_trips;
        }
    }
    std::stable_sort(pending.begin(), pending.end(),
                     [](const Pending& a, const Pending& b) { return a.t < b.t; });
    std::array<int, kNumEventTypes> next_rank{};
    next_rank.fill(1);
    std::vector<EventArrival> out;
    out.reserve(pending.size());
    for (const Pending& p : pending) {
        EventArrival a;
        a.policy_id = policy.policy_id;
        a.event_type = p.type;
        a.rank_k = next_rank[static_cast<int>(p.type)]++;
        a.cum_time_t = p.t;
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<EventArrival> filter_min_occurrences(const std::vector<EventArrival>& arrivals,
                                                 int min_count) {
    std::map<std::pair<int, int>, std::set<std::string>> policies; // (type, rank) -> policy ids
    for (const auto& a : arrivals)
        policies[{static_cast<int>(a.event_type), a.rank_k}].insert(a.policy_id);
    std::vector<EventArrival> out;
    for (const auto& a : arrivals)
        if (static_cast<int>(policies[{static_cast<int>(a.event_type), a.rank_k}].size()) >=
            min_count)
            out.push_back(a);
    return out;
}

PowerLawFit fit_loglog(const std::vector<EventArrival>& arrivals) {
    const std::size_t n = arrivals.size();
    if (n < 3) throw NumericError("fit_loglog: fewer than 3 points");
    double sx = 0, sy = 0;
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (arrivals[i].cum_time_t <= 0.0) throw NumericError("fit_loglog: event at time <= 0");
        xs[i] = std::log(arrivals[i].cum_time_t);
        ys[i] = std::log(static_cast<double>(arrivals[i].rank_k));
        sx += xs[i];
        sy += ys[i];
    }
    const double xbar = sx / static_cast<double>(n);
    const double ybar = sy / static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - xbar) * (xs[i] - xbar);
        sxy += (xs[i] - xbar) * (ys[i] - ybar);
        syy += (ys[i] - ybar) * (ys[i] - ybar);
    }
    if (sxx <= 0.0) throw NumericError("fit_loglog: no variation in time");
    PowerLawFit fit;
    fit.n_points = static_cast<int>(n);
    fit.beta = sxy / sxx;
    fit.alpha = ybar - fit.beta * xbar;
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ys[i] - fit.alpha - fit.beta * xs[i];
        rss += r * r;
    }
    const double s2 = rss / static_cast<double>(n - 2);
    fit.se_beta = std::sqrt(s2 / sxx);
    fit.se_alpha = std::sqrt(s2 * (1.0 / static_cast<double>(n) + xbar * xbar / sxx));
    fit.r_squared = syy > 0.0 ? 1.0 - rss / syy : 1.0;
    return fit;
}

LearningCurvature second_derivative_coeffs(const PowerLawFit& fit) {
    return {std::exp(fit.alpha) * fit.beta * (fit.beta - 1.0), fit.beta - 2.0};
}

AgeInteractionFit fit_loglog_age(const std::vector<EventArrival>& arrivals) {
    std::array<int, 3> group_n{};
    for (const auto& a : arrivals) {
        if (!a.age_group) throw DataError("fit_loglog_age: arrival without age group");
        ++group_n[static_cast<int>(*a.age_group)];
    }
    std::vector<int> present;
    for (int g = 0; g < 3; ++g) {
        if (group_n[g] == 0) continue; // empty group: omitted, slot left empty
        if (group_n[g] < 3) throw NumericError("fit_loglog_age: group with fewer than 3 points");
        present.push_back(g);
    }
    if (present.empty()) throw NumericError("fit_loglog_age: no data");

    const Eigen::Index n = static_cast<Eigen::Index>(arrivals.size());
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(present.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& a = arrivals[static_cast<std::size_t>(i)];
        if (a.cum_time_t <= 0.0) throw NumericError("fit_loglog_age: event at time <= 0");
        X(i, 0) = 1.0;
        const auto slot =
            std::find(present.begin(), present.end(), static_cast<int>(*a.age_group));
        X(i, 1 + (slot - present.begin())) = std::log(a.cum_time_t);
        y[i] = std::log(static_cast<double>(a.rank_k));
    }
    const Eigen::MatrixXd xtx = X.transpose() * X;
    Eigen::LDLT<Eigen::MatrixXd> solver(xtx);
    const Eigen::VectorXd coef = solver.solve(X.transpose() * y);
    const double rss = (y - X * coef).squaredNorm();
    if (n <= p) throw NumericError("fit_loglog_age: too few points");
    const double s2 = rss / static_cast<double>(n - p);
    const Eigen::MatrixXd cov = s2 * xtx.inverse();

    AgeInteractionFit fit;
    fit.alpha = coef[0];
    fit.se_alpha = std::sqrt(std::max(0.0, cov(0, 0)));
    for (std::size_t s = 0; s < present.size(); ++s) {
        const Eigen::Index j = 1 + static_cast<Eigen::Index>(s);
        fit.slopes[static_cast<std::size_t>(present[s])] =
            GroupSlope{coef[j], std::sqrt(std::max(0.0, cov(j, j))), group_n[present[s]]};
    }
    return fit;
}

std::string learning_report_csv(const std::vector<EventArrival>& arrivals, int min_count) {
    std::ostringstream out;
    out << "population,rank_filter,event_type,n_points,alpha,beta,se_beta,r_squared,c,p\n";
    out.setf(std::ios::fmtflags(0), std::ios::floatfield);
    out.precision(6);

    const auto emit = [&](const std::string& population, const std::string& filter,
                          const std::vector<EventArrival>& rows) {
        for (int t = 0; t < kNumEventTypes; ++t) {
            std::vector<EventArrival> typed;
            for (const auto& a : rows)
                if (static_cast<int>(a.event_type) == t) typed.push_back(a);
            out << population << ',' << filter << ',' << event_type_name(static_cast<EventType>(t))
                << ',';
            if (typed.size() < 3) {
                out << typed.size() << ",,,,,,\n";
                continue;
            }
            const auto fit = fit_loglog(typed);
            const auto curv = second_derivative_coeffs(fit);
            out << fit.n_points << ',' << fit.alpha << ',' << fit.beta << ',' << fit.se_beta << ','
                << fit.r_squared << ',' << curv.c << ',' << curv.p << '\n';
        }
    };

    const auto subset = [&](std::optional<ClaimGroup> group) {
        std::vector<EventArrival> rows;
        for (const auto& a : arrivals)
            if (!group || a.claim_group == *group) rows.push_back(a);
        return rows;
    };

    for (const auto& [population, rows] :
         {std::pair{std::string("all"), subset(std::nullopt)},
          std::pair{std::string("claimed"), subset(ClaimGroup::Claimed)},
          std::pair{std::string("no_claim"), subset(ClaimGroup::NoClaim)}}) {
        emit(population, "all", rows);
        emit(population, "min" + std::to_string(min_count),
             filter_min_occurrences(rows, min_count));
    }
    return out.str();
}

} // namespace telem::learning
