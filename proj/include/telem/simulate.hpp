#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "telem/features.hpp"
#include "telem/ingest.hpp"

namespace telem::simulate {

struct DefectRates {
    double out_of_order = 0.0;   // chance per eligible position of displacing a block
    double invalid_gps = 0.0;    // chance per trip of a GPS calibration window
    double missing_keyoff = 0.0; // chance per trip of dropping the trailing KEY OFF
};

struct SimConfig {
    int n_policies = 50;
    double trips_per_policy_mean = 20.0; // Poisson, floored at 1
    double trip_minutes_mean = 30.0;     // Poisson, floored at 5

    features::BinConfig bin_config = features::BinConfig::default_config();
    Eigen::MatrixXd speed_markov; // m x m row-stochastic ground truth

    // 0.5G events: homogeneous per-minute rates (accel, brake, left, right).
    std::array<double, 4> harsh_rates = {0.02, 0.02, 0.01, 0.01};
    // 1.5G events: cumulative intensity a * t^beta over driving hours.
    double severe_a = 2.0;
    double severe_learning_beta = 0.5;

    // ln mu = intercept + exposure_coef * ln(driving hours) + covs . z
    double claim_intercept = -1.0;
    double exposure_coef = 0.55;
    std::vector<double> cov_coefs = {0.4, -0.3}; // standard-normal policy covariates
    double theta = 1.2; // NB dispersion; infinity means Poisson claims

    DefectRates defect_rates;
    std::uint64_t seed = 1;

    /// Throws ConfigError on invalid rates, a non-stochastic speed_markov, or
    /// severe_learning_beta outside (0, 1].
    void validate() const;

    /// A config with a banded random-walk speed chain (bin width 10).
    static SimConfig defaults();
};

struct PolicyMeta {
    std::string policy_id;
    std::string device_id;
    Timestamp coverage_start = 0;
    Timestamp coverage_end = 0;
    int claims = 0;
    int age = 0;
    std::vector<double> covs;
};

struct GroundTruth {
    Eigen::MatrixXd transition;
    std::vector<double> mu;            // per-policy true claim means
    std::vector<int> claims;
    std::vector<double> exposure_hours;
    std::vector<std::vector<double>> severe_times_h; // cumulative driving hours
    std::size_t transitions_per_policy = 0;          // minimum over policies
};

struct Portfolio {
    std::vector<ingest::RawRecord> records;    // stream order, device by device
    std::vector<ingest::TripListEntry> trips;
    std::vector<PolicyMeta> policies;
    GroundTruth truth;
};

/// Generates a portfolio under cfg: per trip, speeds follow the ground-truth
/// chain at 60 s steps; 0.5G events arrive homogeneously; severe events
/// follow the power-law intensity; claims are drawn from the declared family
/// on the ground-truth linear predictor. Defects are then injected at the
/// configured rates. Deterministic per (cfg, seed); policies use derived
/// seeds so generation order is immaterial.
Portfolio simulate_portfolio(const SimConfig& cfg);

struct DefectManifest {
    std::vector<std::pair<std::size_t, std::size_t>> displaced_blocks; // (start, length)
    std::size_t fixgps_inserted = 0;
    std::size_t keyoffs_removed = 0;
};

/// Applies the known stream pathologies: contiguous blocks displaced later in the
/// stream, FIX GPS OK calibration records inserted after KEY ON, trailing
/// KEY OFF records deleted. The manifest reports exactly what was done.
std::vector<ingest::RawRecord> inject_defects(const std::vector<ingest::RawRecord>& clean,
                                              const DefectRates& rates, std::uint64_t seed,
                                              DefectManifest& manifest);

/// Serializations in the exact formats the ingest parsers consume.
std::string raw_records_text(const std::vector<ingest::RawRecord>& records);
std::string trip_list_text(const std::vector<ingest::TripListEntry>& entries);
std::string policy_table_text(const std::vector<PolicyMeta>& policies);

std::string ground_truth_json(const SimConfig& cfg, const GroundTruth& truth);

} // namespace telem::simulate
