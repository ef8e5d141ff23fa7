#include "telem/regress.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <json.hpp>

#include "telem/errors.hpp"

namespace telem::regress {

namespace {

constexpr double kRelTol = 1e-8;
constexpr int kMaxIrlsSweeps = 100;
constexpr int kMaxThetaNewton = 50;
constexpr double kThetaCap = 1e6;
constexpr double kRankTol = 1e-10;

double poisson_ll(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        ll += y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(y[i] + 1.0);
    return ll;
}

double negbin_ll(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, double theta) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double mu = std::exp(eta[i]);
        ll += std::lgamma(y[i] + theta) - std::lgamma(theta) - std::lgamma(y[i] + 1.0) +
              theta * std::log(theta / (theta + mu)) + y[i] * (eta[i] - std::log(theta + mu));
    }
    return ll;
}

void check_rank(const Eigen::MatrixXd& X) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(kRankTol);
    if (qr.rank() < X.cols()) throw NumericError("design matrix is rank deficient");
}

// One weighted least-squares solve of the IRLS normal equations.
Eigen::VectorXd wls_step(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                         const Eigen::VectorXd& z) {
    const Eigen::MatrixXd Xw = w.asDiagonal() * X;
    const Eigen::MatrixXd A = X.transpose() * Xw;
    const Eigen::VectorXd b = Xw.transpose() * z;
    return A.ldlt().solve(b);
}

Eigen::VectorXd irls_std_errors(const Eigen::MatrixXd& X, const Eigen::VectorXd& w) {
    const Eigen::MatrixXd A = X.transpose() * (w.asDiagonal() * X);
    const Eigen::MatrixXd cov = A.ldlt().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    return cov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

// IRLS for a log-link count family at fixed dispersion. Working weights are
// mu (Poisson) or mu/(1+mu/theta) (NB2). Step halving keeps the
// log-likelihood non-decreasing.
struct IrlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd weights;
    double ll = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> ll_trace;
};

IrlsResult run_irls(const Design& d, double theta, Eigen::VectorXd beta0) {
    const bool poisson = !std::isfinite(theta);
    const auto loglik = [&](const Eigen::VectorXd& eta) {
        return poisson ? poisson_ll(d.y, eta) : negbin_ll(d.y, eta, theta);
    };

    IrlsResult res;
    res.beta = std::move(beta0);
    Eigen::VectorXd eta = d.X * res.beta + d.offset;
    res.ll = loglik(eta);
    res.ll_trace.push_back(res.ll);

    for (int iter = 0; iter < kMaxIrlsSweeps; ++iter) {
        const Eigen::VectorXd mu = eta.array().exp();
        Eigen::VectorXd w(mu.size());
        for (Eigen::Index i = 0; i < mu.size(); ++i)
            w[i] = poisson ? mu[i] : mu[i] / (1.0 + mu[i] / theta);
        const Eigen::VectorXd z = (eta - d.offset).array() + (d.y - mu).array() / mu.array();

        Eigen::VectorXd proposal = wls_step(d.X, w, z);
        Eigen::VectorXd eta_new = d.X * proposal + d.offset;
        double ll_new = loglik(eta_new);
        for (int halving = 0; halving < 40 && !(ll_new >= res.ll - 1e-12); ++halving) {
            proposal = 0.5 * (proposal + res.beta);
            eta_new = d.X * proposal + d.offset;
            ll_new = loglik(eta_new);
        }
        if (!(ll_new >= res.ll - 1e-12)) break; // no admissible step

        const double beta_change =
            (proposal - res.beta).norm() / std::max(1.0, res.beta.norm());
        const double ll_change = std::abs(ll_new - res.ll) / std::max(1.0, std::abs(res.ll));
        res.beta = proposal;
        eta = eta_new;
        res.ll = std::max(ll_new, res.ll);
        res.ll_trace.push_back(res.ll);
        res.iterations = iter + 1;
        for (Eigen::Index i = 0; i < mu.size(); ++i) {
            const double m = std::exp(eta[i]);
            w[i] = poisson ? m : m / (1.0 + m / theta);
        }
        res.weights = w;
        if (beta_change < kRelTol && ll_change < kRelTol) {
            res.converged = true;
            break;
        }
    }
    if (res.weights.size() == 0) {
        const Eigen::VectorXd mu = eta.array().exp();
        res.weights = poisson ? mu : (mu.array() / (1.0 + mu.array() / theta)).matrix();
    }
    return res;
}

Eigen::VectorXd initial_beta(const Design& d) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.X.cols());
    const double ybar = std::max(d.y.mean(), 0.05);
    beta[0] = std::log(ybar) - d.offset.mean();
    return beta;
}

// Method-of-moments dispersion from a Poisson fit.
double moment_theta(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        num += mu[i] * mu[i];
        den += (y[i] - mu[i]) * (y[i] - mu[i]) - mu[i];
    }
    if (den <= 0.0) return kThetaCap * 2.0;
    return std::clamp(num / den, 1e-3, kThetaCap * 2.0);
}

// Newton maximization of the NB2 profile likelihood in log(theta).
double update_theta(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double theta) {
    using boost::math::digamma;
    using boost::math::trigamma;
    const auto ll = [&](double th) {
        double v = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i)
            v += std::lgamma(y[i] + th) - std::lgamma(th) + th * std::log(th / (th + mu[i])) +
                 y[i] * std::log(mu[i] / (th + mu[i]));
        return v;
    };
    double u = std::log(theta);
    double cur_ll = ll(theta);
    for (int step = 0; step < kMaxThetaNewton; ++step) {
        const double th = std::exp(u);
        if (th > kThetaCap) break;
        double score = 0.0, hess = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double denom = th + mu[i];
            score += digamma(y[i] + th) - digamma(th) + std::log(th) + 1.0 - std::log(denom) -
                     (y[i] + th) / denom;
            hess += trigamma(y[i] + th) - trigamma(th) + 1.0 / th - 2.0 / denom +
                    (y[i] + th) / (denom * denom);
        }
        const double score_u = th * score;
        const double hess_u = th * th * hess + th * score;
        double delta = hess_u < 0.0 ? -score_u / hess_u : (score_u > 0.0 ? 0.5 : -0.5);
        delta = std::clamp(delta, -2.0, 2.0);
        double u_new = u + delta;
        double ll_new = ll(std::exp(u_new));
        for (int halving = 0; halving < 30 && !(ll_new >= cur_ll - 1e-12); ++halving) {
            u_new = 0.5 * (u_new + u);
            ll_new = ll(std::exp(u_new));
        }
        if (!(ll_new >= cur_ll - 1e-12)) break;
        const bool done = std::abs(u_new - u) < kRelTol;
        u = u_new;
        cur_ll = ll_new;
        if (done) break;
    }
    return std::exp(u);
}

} // namespace

Term Term::numeric(std::string column) {
    Term t;
    t.name = column;
    t.kind = Kind::Numeric;
    t.columns = {std::move(column)};
    return t;
}

Term Term::logged(std::string column) {
    Term t;
    t.name = "log(" + column + ")";
    t.kind = Kind::Logged;
    t.columns = {std::move(column)};
    return t;
}

Term Term::categorical(std::string column, std::string reference) {
    Term t;
    t.name = column;
    t.kind = Kind::Categorical;
    t.columns = {std::move(column)};
    t.reference = std::move(reference);
    return t;
}

Term Term::block(std::string name, std::vector<std::string> columns) {
    Term t;
    t.name = std::move(name);
    t.kind = Kind::NumericBlock;
    t.columns = std::move(columns);
    return t;
}

Design build_design(const Table& table, const ModelSpec& spec) {
    const std::size_t n = table.n_rows();
    if (!table.has_numeric(spec.response)) throw DataError("missing response column: " + spec.response);
    const auto& y_col = table.numeric(spec.response);

    const bool has_exposure = spec.exposure.mode != Exposure::Mode::None;
    const std::vector<double>* exposure_col = nullptr;
    if (has_exposure) {
        if (!table.has_numeric(spec.exposure.column))
            throw DataError("missing exposure column: " + spec.exposure.column);
        exposure_col = &table.numeric(spec.exposure.column);
    }

    // Row screening: response sanity, positive exposure, positive logged terms.
    Design d;
    for (std::size_t r = 0; r < n; ++r) {
        if (!(y_col[r] >= 0.0)) throw DataError("negative or NaN response at row " + std::to_string(r));
        bool keep = true;
        if (has_exposure && (*exposure_col)[r] <= 0.0) keep = false;
        for (const auto& term : spec.terms) {
            if (term.kind != Term::Kind::Logged) continue;
            if (!table.has_numeric(term.columns[0]))
                throw DataError("missing column: " + term.columns[0]);
            if (table.numeric(term.columns[0])[r] <= 0.0) keep = false;
        }
        if (keep)
            d.kept_rows.push_back(r);
        else
            ++d.rejected_rows;
    }
    const std::size_t nk = d.kept_rows.size();
    if (nk == 0) throw DataError("no usable rows after exposure screening");

    std::vector<std::vector<double>> cols;
    std::vector<std::string> names;
    cols.emplace_back(nk, 1.0);
    names.emplace_back("intercept");

    const bool logged_exposure = spec.exposure.mode == Exposure::Mode::LoggedCovariate;
    if (logged_exposure) {
        std::vector<double> c(nk);
        for (std::size_t i = 0; i < nk; ++i) c[i] = std::log((*exposure_col)[d.kept_rows[i]]);
        cols.push_back(std::move(c));
        names.push_back("log(" + spec.exposure.column + ")");
    }

    std::set<std::string> seen_terms;
    for (const auto& term : spec.terms) {
        if (!seen_terms.insert(term.name).second)
            throw ConfigError("duplicate term: " + term.name);
        std::vector<int> term_cols;
        switch (term.kind) {
        case Term::Kind::Numeric:
        case Term::Kind::NumericBlock: {
            for (const auto& col_name : term.columns) {
                if (!table.has_numeric(col_name)) throw DataError("missing column: " + col_name);
                const auto& src = table.numeric(col_name);
                std::vector<double> c(nk);
                for (std::size_t i = 0; i < nk; ++i) c[i] = src[d.kept_rows[i]];
                term_cols.push_back(static_cast<int>(cols.size()));
                cols.push_back(std::move(c));
                names.push_back(col_name);
            }
            break;
        }
        case Term::Kind::Logged: {
            const auto& src = table.numeric(term.columns[0]);
            std::vector<double> c(nk);
            for (std::size_t i = 0; i < nk; ++i) c[i] = std::log(src[d.kept_rows[i]]);
            term_cols.push_back(static_cast<int>(cols.size()));
            cols.push_back(std::move(c));
            names.push_back(term.name);
            break;
        }
        case Term::Kind::Categorical: {
            if (!table.has_categorical(term.columns[0]))
                throw DataError("missing categorical column: " + term.columns[0]);
            const auto& src = table.categorical(term.columns[0]);
            std::set<std::string> levels(src.begin(), src.end());
            if (levels.count(term.reference) == 0)
                throw DataError("reference level '" + term.reference + "' absent in column " +
                                term.columns[0]);
            for (const auto& level : levels) {
                if (level == term.reference) continue;
                std::vector<double> c(nk);
                for (std::size_t i = 0; i < nk; ++i)
                    c[i] = src[d.kept_rows[i]] == level ? 1.0 : 0.0;
                term_cols.push_back(static_cast<int>(cols.size()));
                cols.push_back(std::move(c));
                names.push_back(term.columns[0] + "_" + level);
            }
            break;
        }
        }
        d.term_columns.emplace_back(term.name, std::move(term_cols));
    }

    d.X.resize(nk, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
        for (std::size_t i = 0; i < nk; ++i) d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
    d.col_names = std::move(names);

    d.y.resize(nk);
    d.offset = Eigen::VectorXd::Zero(nk);
    for (std::size_t i = 0; i < nk; ++i) {
        d.y[static_cast<Eigen::Index>(i)] = y_col[d.kept_rows[i]];
        if (has_exposure && !logged_exposure)
            d.offset[static_cast<Eigen::Index>(i)] = std::log((*exposure_col)[d.kept_rows[i]]);
    }
    return d;
}

Design Design::subset(const std::vector<std::string>& term_names) const {
    std::set<std::string> wanted(term_names.begin(), term_names.end());
    std::vector<int> keep_cols;
    // Columns before the first term (intercept, exposure) are always kept.
    int first_term_col = static_cast<int>(X.cols());
    for (const auto& [name, idxs] : term_columns)
        for (int c : idxs) first_term_col = std::min(first_term_col, c);
    for (int c = 0; c < first_term_col; ++c) keep_cols.push_back(c);

    Design out;
    for (const auto& [name, idxs] : term_columns) {
        if (wanted.count(name) == 0) continue;
        std::vector<int> new_idx;
        for (int c : idxs) {
            new_idx.push_back(static_cast<int>(keep_cols.size()));
            keep_cols.push_back(c);
        }
        out.term_columns.emplace_back(name, std::move(new_idx));
    }
    out.X.resize(X.rows(), static_cast<Eigen::Index>(keep_cols.size()));
    for (std::size_t j = 0; j < keep_cols.size(); ++j) {
        out.X.col(static_cast<Eigen::Index>(j)) = X.col(keep_cols[j]);
        out.col_names.push_back(col_names[static_cast<std::size_t>(keep_cols[j])]);
    }
    out.y = y;
    out.offset = offset;
    out.rejected_rows = rejected_rows;
    out.kept_rows = kept_rows;
    return out;
}

double FittedGLM::coefficient(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return coef[static_cast<Eigen::Index>(i)];
    throw ConfigError("unknown coefficient: " + name);
}

double FittedGLM::std_error(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return se[static_cast<Eigen::Index>(i)];
    throw ConfigError("unknown coefficient: " + name);
}

FittedGLM fit_poisson(const Design& design) {
    check_rank(design.X);
    IrlsResult irls = run_irls(design, std::numeric_limits<double>::infinity(),
                               initial_beta(design));
    FittedGLM out;
    out.family = Family::Poisson;
    out.names = design.col_names;
    out.coef = irls.beta;
    out.se = irls_std_errors(design.X, irls.weights);
    out.log_likelihood = irls.ll;
    out.converged = irls.converged;
    out.iterations = irls.iterations;
    out.ll_trace = std::move(irls.ll_trace);
    return out;
}

FittedGLM fit_negbin(const Design& design) {
    check_rank(design.X);
    FittedGLM poisson = fit_poisson(design);
    Eigen::VectorXd eta = design.X * poisson.coef + design.offset;
    Eigen::VectorXd mu = eta.array().exp();
    double theta = moment_theta(design.y, mu);

    Eigen::VectorXd beta = poisson.coef;
    std::vector<double> trace;
    bool converged = false;
    int sweeps = 0;
    for (int sweep = 0; sweep < kMaxIrlsSweeps && theta <= kThetaCap; ++sweep) {
        IrlsResult irls = run_irls(design, theta, beta);
        for (double v : irls.ll_trace) trace.push_back(v);
        mu = (design.X * irls.beta + design.offset).array().exp();
        const double theta_new = update_theta(design.y, mu, theta);
        const double beta_change = (irls.beta - beta).norm() / std::max(1.0, beta.norm());
        const double theta_change = std::abs(theta_new - theta) / std::max(1.0, theta);
        beta = irls.beta;
        theta = theta_new;
        sweeps = sweep + 1;
        if (beta_change < kRelTol && theta_change < kRelTol) {
            converged = true;
            break;
        }
    }

    if (theta > kThetaCap) {
        // No overdispersion: report the Poisson-equivalent fit.
        FittedGLM out = fit_poisson(design);
        out.family = Family::NegBin;
        out.theta = std::numeric_limits<double>::infinity();
        out.theta_diverged = true;
        return out;
    }

    IrlsResult final_irls = run_irls(design, theta, beta);
    FittedGLM out;
    out.family = Family::NegBin;
    out.names = design.col_names;
    out.coef = final_irls.beta;
    out.se = irls_std_errors(design.X, final_irls.weights);
    out.theta = theta;
    out.log_likelihood = negbin_ll(design.y, design.X * final_irls.beta + design.offset, theta);
    out.converged = converged;
    out.iterations = sweeps;
    out.ll_trace = std::move(trace);
    return out;
}

FittedGLM fit(const Design& design, Family family) {
    return family == Family::Poisson ? fit_poisson(design) : fit_negbin(design);
}

double nb_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    if (y.size() != mu.size()) throw ConfigError("nb_deviance: length mismatch");
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (mu[i] == 0.0 && y[i] == 0.0) continue; // limit of the formula is 0
        if (!(mu[i] > 0.0)) throw NumericError("nb_deviance: non-positive mu");
        double term = (1.0 + y[i]) * std::log((1.0 + mu[i]) / (1.0 + y[i]));
        if (y[i] > 0.0) term += y[i] * std::log(y[i] / mu[i]);
        dev += term;
    }
    return 2.0 * dev;
}

Eigen::VectorXd predict_mean(const FittedGLM& model, const Design& design) {
    if (design.X.cols() != model.coef.size())
        throw ConfigError("predict_mean: design width does not match model");
    return (design.X * model.coef + design.offset).array().exp();
}

CountDistribution count_pmf(Family family, double mu, double theta, int k_max) {
    if (k_max < 0) throw ConfigError("count_pmf: negative k_max");
    CountDistribution dist;
    dist.probs.resize(static_cast<std::size_t>(k_max) + 1);
    dist.mean = mu;
    if (family == Family::Poisson || !std::isfinite(theta)) {
        dist.sd = std::sqrt(mu);
        double logp = -mu;
        dist.probs[0] = std::exp(logp);
        for (int k = 1; k <= k_max; ++k) {
            logp += std::log(mu / k);
            dist.probs[static_cast<std::size_t>(k)] = std::exp(logp);
        }
    } else {
        dist.sd = std::sqrt(mu + mu * mu / theta);
        const double log_ratio = std::log(mu / (theta + mu));
        double logp = theta * std::log(theta / (theta + mu));
        dist.probs[0] = std::exp(logp);
        for (int k = 1; k <= k_max; ++k) {
            logp += std::log((k - 1 + theta) / k) + log_ratio;
            dist.probs[static_cast<std::size_t>(k)] = std::exp(logp);
        }
    }
    return dist;
}

WaldResult wald_test(const FittedGLM& model, const std::string& coefficient, double null_value) {
    const double beta = model.coefficient(coefficient);
    const double se = model.std_error(coefficient);
    WaldResult r;
    r.z = (beta - null_value) / se;
    r.p = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    return r;
}

double aic(const FittedGLM& model) {
    double params = static_cast<double>(model.coef.size());
    if (model.family == Family::NegBin) params += 1.0;
    return -2.0 * model.log_likelihood + 2.0 * params;
}

std::vector<std::string> stepwise_aic(const Design& design, Family family) {
    std::vector<std::string> pool;
    for (const auto& [name, cols] : design.term_columns) pool.push_back(name);

    std::set<std::string> current(pool.begin(), pool.end());
    const auto fit_subset = [&](const std::set<std::string>& terms) -> double {
        std::vector<std::string> list(terms.begin(), terms.end());
        return aic(fit(design.subset(list), family));
    };

    double cur_aic = fit_subset(current);
    while (true) {
        double best_aic = cur_aic - 1e-9;
        std::string best_term;
        // Candidates in sorted term-name order for a deterministic tie-break.
        std::set<std::string> sorted_pool(pool.begin(), pool.end());
        for (const auto& term : sorted_pool) {
            std::set<std::string> candidate = current;
            if (candidate.count(term))
                candidate.erase(term);
            else
                candidate.insert(term);
            double a;
            try {
                a = fit_subset(candidate);
            } catch (const NumericError&) {
                continue; // unimprovable move
            }
            if (a < best_aic) {
                best_aic = a;
                best_term = term;
            }
        }
        if (best_term.empty()) break;
        if (current.count(best_term))
            current.erase(best_term);
        else
            current.insert(best_term);
        cur_aic = best_aic;
    }

    std::vector<std::string> selected;
    for (const auto& name : pool)
        if (current.count(name)) selected.push_back(name);
    return selected;
}

std::string model_to_json(const FittedGLM& model) {
    nlohmann::json j;
    j["family"] = model.family == Family::Poisson ? "poisson" : "negbin";
    nlohmann::json coef = nlohmann::json::object();
    nlohmann::json se = nlohmann::json::object();
    for (std::size_t i = 0; i < model.names.size(); ++i) {
        coef[model.names[i]] = model.coef[static_cast<Eigen::Index>(i)];
        se[model.names[i]] = model.se[static_cast<Eigen::Index>(i)];
    }
    j["coefficients"] = coef;
    j["std_errors"] = se;
    if (model.family == Family::NegBin) {
        j["theta"] = std::isfinite(model.theta) ? nlohmann::json(model.theta)
                                                : nlohmann::json("inf");
        j["theta_diverged"] = model.theta_diverged;
    }
    j["log_likelihood"] = model.log_likelihood;
    j["converged"] = model.converged;
    j["iterations"] = model.iterations;
    return j.dump(2);
}

} // namespace telem::regress
