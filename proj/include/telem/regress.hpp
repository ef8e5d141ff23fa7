#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "telem/table.hpp"

namespace telem::regress {

enum class Family { Poisson, NegBin };

/// One votable unit of the model: a single covariate, a logged covariate, a
/// categorical expansion, or a block of columns that enters and leaves the
/// model together (e.g. the timeslot proportions).
struct Term {
    enum class Kind { Numeric, Logged, Categorical, NumericBlock };
    std::string name;
    Kind kind = Kind::Numeric;
    std::vector<std::string> columns; // single column except for NumericBlock
    std::string reference;            // categorical reference level

    static Term numeric(std::string column);
    static Term logged(std::string column);
    static Term categorical(std::string column, std::string reference);
    static Term block(std::string name, std::vector<std::string> columns);
};

struct Exposure {
    enum class Mode { None, Offset, LoggedCovariate, PolicyPeriodOffset };
    Mode mode = Mode::None;
    std::string column;

    static Exposure none() { return {}; }
    static Exposure offset(std::string column) { return {Mode::Offset, std::move(column)}; }
    static Exposure logged_covariate(std::string column) {
        return {Mode::LoggedCovariate, std::move(column)};
    }
    static Exposure policy_period_offset() {
        return {Mode::PolicyPeriodOffset, "policy_period"};
    }
};

struct ModelSpec {
    std::string response;
    std::vector<Term> terms;
    Exposure exposure;
    Family family = Family::NegBin;
};

/// Design matrix with intercept in column 0 and, under LoggedCovariate
/// exposure, the logged exposure in column 1. term_columns maps each term to
/// its column indices for stepwise subsetting.
struct Design {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd offset;
    std::vector<std::string> col_names;
    std::vector<std::pair<std::string, std::vector<int>>> term_columns;
    std::size_t rejected_rows = 0;        // non-positive exposure
    std::vector<std::size_t> kept_rows;   // indices into the source table

    /// Columns for a term subset (intercept and exposure always included).
    Design subset(const std::vector<std::string>& term_names) const;
};

/// Builds the design from a feature table. Throws DataError on a missing
/// column or negative/NaN response; rows with non-positive exposure are
/// dropped and counted. Categorical levels come from the data (sorted), with
/// the declared reference dropped; an absent reference level is an error.
Design build_design(const Table& table, const ModelSpec& spec);

struct FittedGLM {
    Family family = Family::Poisson;
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
    double theta = std::numeric_limits<double>::infinity(); // NegBin dispersion
    bool theta_diverged = false; // no overdispersion detected
    double log_likelihood = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> ll_trace; // one entry per accepted IRLS step

    double coefficient(const std::string& name) const;
    double std_error(const std::string& name) const;
};

/// Log-link Poisson ML fit via iteratively reweighted least squares with
/// step halving (log-likelihood never decreases). Throws NumericError on a
/// rank-deficient design; a non-converged fit returns the best iterate with
/// converged=false.
FittedGLM fit_poisson(const Design& design);

/// NB2 ML fit (variance mu + mu^2/theta): IRLS for coefficients at fixed
/// theta alternating with Newton updates of theta, initialized from the
/// Poisson fit and a method-of-moments theta. theta > 1e6 reports the
/// Poisson-equivalent fit flagged theta_diverged.
FittedGLM fit_negbin(const Design& design);

FittedGLM fit(const Design& design, Family family);

/// The theta=1 deviance used as the cross-validation metric:
/// D = 2 sum{ y ln(y/mu) + (1+y) ln((1+mu)/(1+y)) }, y ln(y/mu) := 0 at y=0.
double nb_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu);

/// mu = exp(offset + x.beta) for every design row.
Eigen::VectorXd predict_mean(const FittedGLM& model, const Design& design);

struct CountDistribution {
    std::vector<double> probs; // P(Y = k), k = 0..K_max
    double mean = 0.0;
    double sd = 0.0;
};

/// Poisson or NB2 pmf up to K_max via a stable log recurrence.
CountDistribution count_pmf(Family family, double mu, double theta, int k_max);

struct WaldResult {
    double z = 0.0;
    double p = 1.0;
};

/// z = (beta_hat - null_value) / SE with a two-sided standard-normal p.
WaldResult wald_test(const FittedGLM& model, const std::string& coefficient, double null_value);

/// AIC = -2 ll + 2 #params; theta counts as one parameter for NB fits.
double aic(const FittedGLM& model);

/// Stepwise both-direction AIC selection over the spec's term pool, starting
/// from the full model. Single add-or-drop moves, largest AIC decrease first,
/// ties broken by term name; a failed candidate fit is skipped. Returns the
/// selected term names in pool order.
std::vector<std::string> stepwise_aic(const Design& design, Family family);

/// Fit serialized as JSON (spec echo, coefficients, SEs, theta, diagnostics).
std::string model_to_json(const FittedGLM& model);

} // namespace telem::regress
