#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "telem/regress.hpp"
#include "telem/table.hpp"

namespace telem::evaluate {

struct FoldPlan {
    int k = 5;
    std::vector<int> assignments; // fold index per policy
    std::vector<double> fold_means;
    std::uint64_t seed = 0;
    bool balanced = true; // false when the tolerance was unreachable

    double mean_spread() const;
};

/// Stratified k-fold split balanced on mean claim count: policies are
/// grouped by claim count, shuffled within strata, and dealt round-robin;
/// reshuffles (up to 100) until the fold-mean spread is within tolerance.
/// Deterministic given the seed; an unbalanceable input returns the best
/// attempt flagged.
FoldPlan kfold_partition(const std::vector<double>& claim_counts, int k, std::uint64_t seed,
                         double tolerance = 0.05);

double rmse(const std::vector<double>& y, const std::vector<double>& yhat);
double mae(const std::vector<double>& y, const std::vector<double>& yhat);

/// chi^2 = sum (O_g - E_g)^2 / E_g over claim levels 0..m. Bins with
/// expectation below min_expected are merged upward into their neighbour
/// (counted in merges). O and E must have equal length.
double chi_square_stat(const std::vector<double>& observed, const std::vector<double>& expected,
                       double min_expected = 0.0, std::size_t* merges = nullptr);

/// Observed claim-level histogram (level m aggregates counts >= m) and
/// model-expected counts E_g = sum_i P(Y_i = g) from per-row predictive
/// distributions.
std::vector<double> observed_level_counts(const std::vector<double>& y, int m);
std::vector<double> expected_level_counts(const std::vector<regress::CountDistribution>& dists,
                                          int m);

/// Proper scoring rules for one predictive count distribution and outcome.
double score_qs(const regress::CountDistribution& p, int x);
double score_sphs(const regress::CountDistribution& p, int x);
double score_rps(const regress::CountDistribution& p, int x);
double score_dss(const regress::CountDistribution& p, int x);

/// Truncation length for predictive distributions: ceil(mu + 20 sd), at
/// least 50, always covering the observed count.
int pmf_truncation(double mu, double sd, int max_observed);

struct MetricsReport {
    // Fold-averaged values.
    double deviance = 0.0; // mean per-observation theta=1 deviance
    double rmse = 0.0;
    double mae = 0.0;
    double qs = 0.0;
    double sphs = 0.0;
    double rps = 0.0;
    double dss = 0.0;
    double chi_square = 0.0;
    // Per-fold breakdown, one entry per fold, same order as metric fields.
    std::vector<std::map<std::string, double>> per_fold;
};

struct VoteLedger {
    std::map<std::string, int> votes; // term -> folds that selected it
    int threshold = 3;
    std::vector<std::string> final_terms;
};

struct CvResult {
    VoteLedger ledger;
    MetricsReport metrics;
};

/// Majority-vote feature selection: stepwise AIC per training fold, votes
/// tallied, final terms = those with votes >= threshold; each test fold is
/// then scored against a model refit on its training fold with the final
/// terms.
CvResult majority_vote_select(const Table& table, const regress::ModelSpec& pool,
                              const FoldPlan& plan, int threshold = 3);

/// Cross-validated metrics for a fixed term set (no stepwise selection).
MetricsReport cross_validate(const Table& table, const regress::ModelSpec& spec,
                             const FoldPlan& plan);

struct PredictionDistribution {
    std::vector<double> observed;   // counts per claim level 0..m
    std::vector<double> expected;   // expected counts per level
    double total_observed = 0.0;    // sum of observed claims
    double total_expected = 0.0;    // sum of predicted means
    double relative_error = 0.0;    // (expected - observed) / observed

    /// Signed-percentage rendering of the relative error, e.g. "(+3.04%)".
    std::string relative_error_label() const;
};

PredictionDistribution predicted_count_distribution(const regress::FittedGLM& model,
                                                    const regress::Design& design, int m);

struct WelchResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
};

/// Welch two-sample t-test with Satterthwaite degrees of freedom, two-sided.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// CV report rendered as JSON (vote counts + metric rows).
std::string cv_report_json(const CvResult& result);

} // namespace telem::evaluate
