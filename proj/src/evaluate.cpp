#include "telem/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include <json.hpp>

#include "telem/errors.hpp"

namespace telem::evaluate {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double fold_mean(const std::vector<double>& claims, const std::vector<int>& assign, int fold) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < claims.size(); ++i) {
        if (assign[i] == fold) {
            sum += claims[i];
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

} // namespace

double FoldPlan::mean_spread() const {
    if (fold_means.empty()) return 0.0;
    auto [lo, hi] = std::minmax_element(fold_means.begin(), fold_means.end());
    return *hi - *lo;
}

FoldPlan kfold_partition(const std::vector<double>& claim_counts, int k, std::uint64_t seed,
                         double tolerance) {
    const std::size_t n = claim_counts.size();
    if (k < 2 || static_cast<std::size_t>(k) > n)
        throw ConfigError("kfold_partition: k must be in [2, n]");

    // Strata: policies sharing a claim count, in ascending count order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return claim_counts[a] < claim_counts[b]; });
    std::vector<std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == 0 || claim_counts[order[i]] != claim_counts[order[i - 1]]) strata.emplace_back();
        strata.back().push_back(order[i]);
    }

    FoldPlan best;
    best.k = k;
    best.seed = seed;
    double best_spread = std::numeric_limits<double>::infinity();
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::mt19937_64 rng(splitmix64(seed ^ (0xa5a5ULL * static_cast<std::uint64_t>(attempt))));
        std::vector<int> assign(n, 0);
        std::size_t counter = 0;
        for (auto stratum : strata) {
            std::shuffle(stratum.begin(), stratum.end(), rng);
            for (std::size_t idx : stratum) assign[idx] = static_cast<int>(counter++ % k);
        }
        std::vector<double> means(static_cast<std::size_t>(k));
        for (int f = 0; f < k; ++f) means[static_cast<std::size_t>(f)] = fold_mean(claim_counts, assign, f);
        auto [lo, hi] = std::minmax_element(means.begin(), means.end());
        const double spread = *hi - *lo;
        if (spread < best_spread) {
            best_spread = spread;
            best.assignments = std::move(assign);
            best.fold_means = std::move(means);
        }
        if (best_spread <= tolerance) break;
    }
    best.balanced = best_spread <= tolerance;
    return best;
}

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.empty() || y.size() != yhat.size()) throw ConfigError("rmse: bad input lengths");
    double ss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) ss += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return std::sqrt(ss / static_cast<double>(y.size()));
}

double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.empty() || y.size() != yhat.size()) throw ConfigError("mae: bad input lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]);
    return s / static_cast<double>(y.size());
}

double chi_square_stat(const std::vector<double>& observed, const std::vector<double>& expected,
                       double min_expected, std::size_t* merges) {
    if (observed.size() != expected.size() || observed.empty())
        throw ConfigError("chi_square_stat: bad input lengths");
    const double threshold = std::max(min_expected, 1e-12);
    std::vector<double> O, E;
    double acc_o = 0.0, acc_e = 0.0;
    std::size_t merged = 0;
    for (std::size_t g = 0; g < observed.size(); ++g) {
        acc_o += observed[g];
        acc_e += expected[g];
        if (acc_e >= threshold || g + 1 == observed.size()) {
            O.push_back(acc_o);
            E.push_back(acc_e);
            acc_o = acc_e = 0.0;
        } else {
            ++merged; // sparse bin rolled upward
        }
    }
    // A sparse final bin merges downward into its predecessor.
    while (E.size() > 1 && E.back() < threshold) {
        E[E.size() - 2] += E.back();
        O[O.size() - 2] += O.back();
        E.pop_back();
        O.pop_back();
        ++merged;
    }
    if (merges) *merges = merged;
    double stat = 0.0;
    for (std::size_t g = 0; g < O.size(); ++g) {
        if (E[g] <= 0.0) {
            if (O[g] != 0.0) throw NumericError("chi_square_stat: zero expected, nonzero observed");
            continue;
        }
        stat += (O[g] - E[g]) * (O[g] - E[g]) / E[g];
    }
    return stat;
}

std::vector<double> observed_level_counts(const std::vector<double>& y, int m) {
    std::vector<double> counts(static_cast<std::size_t>(m) + 1, 0.0);
    for (double v : y) {
        const int level = std::min(static_cast<int>(v), m);
        counts[static_cast<std::size_t>(level)] += 1.0;
    }
    return counts;
}

std::vector<double> expected_level_counts(const std::vector<regress::CountDistribution>& dists,
                                          int m) {
    std::vector<double> expected(static_cast<std::size_t>(m) + 1, 0.0);
    for (const auto& d : dists) {
        double below_m = 0.0;
        for (int g = 0; g < m; ++g) {
            const double p =
                g < static_cast<int>(d.probs.size()) ? d.probs[static_cast<std::size_t>(g)] : 0.0;
            expected[static_cast<std::size_t>(g)] += p;
            below_m += p;
        }
        expected[static_cast<std::size_t>(m)] += std::max(0.0, 1.0 - below_m); // tail >= m
    }
    return expected;
}

namespace {

double sum_sq(const regress::CountDistribution& p) {
    double s = 0.0;
    for (double v : p.probs) s += v * v;
    return s;
}

double prob_at(const regress::CountDistribution& p, int x) {
    if (x < 0 || x >= static_cast<int>(p.probs.size())) return 0.0;
    return p.probs[static_cast<std::size_t>(x)];
}

} // namespace

double score_qs(const regress::CountDistribution& p, int x) {
    return -2.0 * prob_at(p, x) + sum_sq(p);
}

double score_sphs(const regress::CountDistribution& p, int x) {
    const double norm = std::sqrt(sum_sq(p));
    if (norm <= 0.0) throw NumericError("score_sphs: zero norm");
    return -prob_at(p, x) / norm;
}

double score_rps(const regress::CountDistribution& p, int x) {
    double cdf = 0.0;
    double score = 0.0;
    for (std::size_t k = 0; k < p.probs.size(); ++k) {
        cdf += p.probs[k];
        const double step = static_cast<int>(k) >= x ? 1.0 : 0.0;
        score += (cdf - step) * (cdf - step);
        // Both tails negligible: the remaining terms are < 1e-24 each.
        if (cdf >= 1.0 - 1e-12 && static_cast<int>(k) >= x) break;
    }
    return score;
}

double score_dss(const regress::CountDistribution& p, int x) {
    if (!(p.sd > 0.0)) throw NumericError("score_dss: degenerate sd");
    const double z = (static_cast<double>(x) - p.mean) / p.sd;
    return z * z + 2.0 * std::log(p.sd);
}

int pmf_truncation(double mu, double sd, int max_observed) {
    // Capped: a wild fold model can predict means far beyond any real count.
    const double raw = std::min(1e5, std::ceil(mu + 20.0 * sd));
    return std::max({50, static_cast<int>(raw), max_observed});
}

namespace {

struct FoldMetrics {
    double deviance, rmse_v, mae_v, qs, sphs, rps, dss, chi_square;
};

regress::Design slice_design_rows(const regress::Design& d, const std::vector<Eigen::Index>& rows) {
    regress::Design out;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), d.X.cols());
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    out.offset.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.X.row(static_cast<Eigen::Index>(i)) = d.X.row(rows[i]);
        out.y[static_cast<Eigen::Index>(i)] = d.y[rows[i]];
        out.offset[static_cast<Eigen::Index>(i)] = d.offset[rows[i]];
        out.kept_rows.push_back(d.kept_rows[static_cast<std::size_t>(rows[i])]);
    }
    out.col_names = d.col_names;
    out.term_columns = d.term_columns;
    return out;
}

FoldMetrics evaluate_fold(const regress::FittedGLM& model, const regress::Design& test) {
    Eigen::VectorXd mu = regress::predict_mean(model, test);
    const std::size_t n = static_cast<std::size_t>(test.y.size());
    std::vector<double> y(n), yhat(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Winsorized: a degenerate fold model can predict absurd means, and
        // every metric must stay finite.
        mu[static_cast<Eigen::Index>(i)] =
            std::clamp(mu[static_cast<Eigen::Index>(i)], 1e-8, 1e4);
        y[i] = test.y[static_cast<Eigen::Index>(i)];
        yhat[i] = mu[static_cast<Eigen::Index>(i)];
    }
    FoldMetrics fm{};
    fm.deviance = regress::nb_deviance(test.y, mu) / static_cast<double>(n);
    fm.rmse_v = rmse(y, yhat);
    fm.mae_v = mae(y, yhat);

    const int m = static_cast<int>(*std::max_element(y.begin(), y.end()));
    std::vector<regress::CountDistribution> dists;
    dists.reserve(n);
    double qs = 0, sphs = 0, rps = 0, dss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mu_i = yhat[i];
        const double sd = model.family == regress::Family::Poisson || !std::isfinite(model.theta)
                              ? std::sqrt(mu_i)
                              : std::sqrt(mu_i + mu_i * mu_i / model.theta);
        const int k_max = pmf_truncation(mu_i, sd, static_cast<int>(y[i]));
        auto dist = regress::count_pmf(model.family, mu_i, model.theta, k_max);
        const int x = static_cast<int>(y[i]);
        qs += score_qs(dist, x);
        sphs += score_sphs(dist, x);
        rps += score_rps(dist, x);
        dss += score_dss(dist, x);
        dists.push_back(std::move(dist));
    }
    fm.qs = qs / static_cast<double>(n);
    fm.sphs = sphs / static_cast<double>(n);
    fm.rps = rps / static_cast<double>(n);
    fm.dss = dss / static_cast<double>(n);
    fm.chi_square = chi_square_stat(observed_level_counts(y, m), expected_level_counts(dists, m), 0.5);
    return fm;
}

MetricsReport average_folds(const std::vector<FoldMetrics>& folds) {
    MetricsReport r;
    for (const auto& fm : folds) {
        r.deviance += fm.deviance;
        r.rmse += fm.rmse_v;
        r.mae += fm.mae_v;
        r.qs += fm.qs;
        r.sphs += fm.sphs;
        r.rps += fm.rps;
        r.dss += fm.dss;
        r.chi_square += fm.chi_square;
        r.per_fold.push_back({{"deviance", fm.deviance},
                              {"rmse", fm.rmse_v},
                              {"mae", fm.mae_v},
                              {"qs", fm.qs},
                              {"sphs", fm.sphs},
                              {"rps", fm.rps},
                              {"dss", fm.dss},
                              {"chi_square", fm.chi_square}});
    }
    const double k = static_cast<double>(folds.size());
    r.deviance /= k;
    r.rmse /= k;
    r.mae /= k;
    r.qs /= k;
    r.sphs /= k;
    r.rps /= k;
    r.dss /= k;
    r.chi_square /= k;
    return r;
}

// Train/test row indices of a fold, in design-row space.
void fold_rows(const regress::Design& design, const FoldPlan& plan, int fold,
               std::vector<Eigen::Index>& train, std::vector<Eigen::Index>& test) {
    train.clear();
    test.clear();
    for (std::size_t i = 0; i < design.kept_rows.size(); ++i) {
        const int f = plan.assignments.at(design.kept_rows[i]);
        (f == fold ? test : train).push_back(static_cast<Eigen::Index>(i));
    }
}

} // namespace

CvResult majority_vote_select(const Table& table, const regress::ModelSpec& pool,
                              const FoldPlan& plan, int threshold) {
    const regress::Design full = regress::build_design(table, pool);
    CvResult result;
    result.ledger.threshold = threshold;
    for (const auto& [name, cols] : full.term_columns) result.ledger.votes[name] = 0;

    std::vector<Eigen::Index> train, test;
    for (int fold = 0; fold < plan.k; ++fold) {
        fold_rows(full, plan, fold, train, test);
        const auto selected = regress::stepwise_aic(slice_design_rows(full, train), pool.family);
        for (const auto& term : selected) ++result.ledger.votes[term];
    }
    for (const auto& [name, cols] : full.term_columns)
        if (result.ledger.votes.at(name) >= threshold) result.ledger.final_terms.push_back(name);

    std::vector<FoldMetrics> folds;
    for (int fold = 0; fold < plan.k; ++fold) {
        fold_rows(full, plan, fold, train, test);
        const auto train_design = slice_design_rows(full, train).subset(result.ledger.final_terms);
        const auto test_design = slice_design_rows(full, test).subset(result.ledger.final_terms);
        const auto model = regress::fit(train_design, pool.family);
        folds.push_back(evaluate_fold(model, test_design));
    }
    result.metrics = average_folds(folds);
    return result;
}

MetricsReport cross_validate(const Table& table, const regress::ModelSpec& spec,
                             const FoldPlan& plan) {
    const regress::Design full = regress::build_design(table, spec);
    std::vector<FoldMetrics> folds;
    std::vector<Eigen::Index> train, test;
    for (int fold = 0; fold < plan.k; ++fold) {
        fold_rows(full, plan, fold, train, test);
        const auto model = regress::fit(slice_design_rows(full, train), spec.family);
        folds.push_back(evaluate_fold(model, slice_design_rows(full, test)));
    }
    return average_folds(folds);
}

std::string PredictionDistribution::relative_error_label() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "(%+.2f%%)", 100.0 * relative_error);
    return buf;
}

PredictionDistribution predicted_count_distribution(const regress::FittedGLM& model,
                                                    const regress::Design& design, int m) {
    const Eigen::VectorXd mu = regress::predict_mean(model, design);
    PredictionDistribution out;
    std::vector<double> y(static_cast<std::size_t>(design.y.size()));
    std::vector<regress::CountDistribution> dists;
    for (Eigen::Index i = 0; i < design.y.size(); ++i) {
        y[static_cast<std::size_t>(i)] = design.y[i];
        const double mu_i = std::clamp(mu[i], 1e-8, 1e4);
        const double sd = model.family == regress::Family::Poisson || !std::isfinite(model.theta)
                              ? std::sqrt(mu_i)
                              : std::sqrt(mu_i + mu_i * mu_i / model.theta);
        dists.push_back(regress::count_pmf(model.family, mu_i, model.theta,
                                           pmf_truncation(mu_i, sd, m)));
        out.total_expected += mu[i];
        out.total_observed += design.y[i];
    }
    out.observed = observed_level_counts(y, m);
    out.expected = expected_level_counts(dists, m);
    out.relative_error = out.total_observed > 0.0
                             ? (out.total_expected - out.total_observed) / out.total_observed
                             : 0.0;
    return out;
}

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw ConfigError("welch_t_test: samples need >= 2 values");
    const auto mean_var = [](const std::vector<double>& s) {
        const double n = static_cast<double>(s.size());
        const double m = std::accumulate(s.begin(), s.end(), 0.0) / n;
        double v = 0.0;
        for (double x : s) v += (x - m) * (x - m);
        return std::pair{m, v / (n - 1.0)};
    };
    const auto [ma, va] = mean_var(a);
    const auto [mb, vb] = mean_var(b);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double sa = va / na;
    const double sb = vb / nb;
    if (sa + sb <= 0.0) {
        // Identical constant samples: no evidence against equal means.
        if (ma == mb) return {0.0, 1.0, na + nb - 2.0};
        throw NumericError("welch_t_test: degenerate samples with zero variance");
    }
    WelchResult r;
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    boost::math::students_t dist(r.df);
    r.p = 2.0 * boost::math::cdf(dist, -std::abs(r.t));
    return r;
}

std::string cv_report_json(const CvResult& result) {
    nlohmann::json j;
    nlohmann::json votes = nlohmann::json::object();
    for (const auto& [term, count] : result.ledger.votes) votes[term] = count;
    j["votes"] = votes;
    j["threshold"] = result.ledger.threshold;
    j["final_terms"] = result.ledger.final_terms;
    j["metrics"] = {{"deviance", result.metrics.deviance}, {"rmse", result.metrics.rmse},
                    {"mae", result.metrics.mae},           {"qs", result.metrics.qs},
                    {"sphs", result.metrics.sphs},         {"rps", result.metrics.rps},
                    {"dss", result.metrics.dss},           {"chi_square", result.metrics.chi_square}};
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& fold : result.metrics.per_fold) {
        nlohmann::json f = nlohmann::json::object();
        for (const auto& [k, v] : fold) f[k] = v;
        folds.push_back(f);
    }
    j["per_fold"] = folds;
    return j.dump(2);
}

} // namespace telem::evaluate
