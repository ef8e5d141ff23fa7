#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "telem/evaluate.hpp"
#include "telem/ingest.hpp"
#include "telem/pca.hpp"
#include "telem/regress.hpp"
#include "telem/simulate.hpp"
#include "telem/table.hpp"

namespace telem::pipeline {

/// End-to-end run configuration; either file inputs or a simulate block.
struct PipelineConfig {
    // [input]
    std::string raw_records_path;
    std::string trip_list_path;
    std::string policy_table_path;

    // [simulate]
    bool use_simulation = false;
    simulate::SimConfig sim = simulate::SimConfig::defaults();

    // [features]
    int bin_width = 10;
    int pca_components = 2;

    // [model]
    regress::Family family = regress::Family::NegBin;
    bool exposure_as_offset = false; // default: log-exposure covariate

    // [cv]
    int cv_k = 5;
    std::uint64_t cv_seed = 17;
    int vote_threshold = 3;

    // [output]
    std::string out_dir = "out";

    /// Throws ConfigError on out-of-range values or when both (or neither of)
    /// file inputs and a simulate block are given.
    void validate() const;
};

/// key=value config with [section] headers; '#' starts a comment.
PipelineConfig parse_config(std::istream& in);
PipelineConfig load_config(const std::string& path);

struct IngestResult {
    std::vector<ingest::PolicyTrips> policies; // retained, aligned with policy_rows
    std::map<std::string, std::vector<ingest::RawRecord>> records; // cleaned, by device
    std::vector<std::string> device_of_policy;
    Table policy_rows;
    ingest::ParseCounters record_counters;
    ingest::ParseCounters trip_counters;
    ingest::FilterTally tally;
    std::size_t policies_rejected = 0;
};

/// Runs parsing, reordering, calibration flagging, trip matching, trip
/// filtering and policy assignment — from the configured files, or from a
/// freshly simulated portfolio.
IngestResult run_ingest(const PipelineConfig& cfg);

struct FeatureResult {
    Table table;
    pca::PCAModel pca_model;
};

/// Per-policy feature table: scalar aggregates, timeslot and road-type
/// proportions, PC scores of the flattened transition matrices, plus the
/// response and passthrough columns of the policy table.
FeatureResult build_features(const IngestResult& ingest_result, int bin_width,
                             int pca_components);

/// The full candidate pool over the feature table's columns.
regress::ModelSpec make_model_spec(const Table& table, regress::Family family,
                                   bool exposure_as_offset);

/// Benchmark spec without telematics covariates (exposure + age only).
regress::ModelSpec make_traditional_spec(const Table& table, regress::Family family,
                                         bool exposure_as_offset);

/// Metric-vs-bin-width table for h = 2..30 plus a trailing benchmark row
/// (h column 0, labelled "traditional"), as CSV.
std::string robustness_sweep(const IngestResult& ingest_result, const PipelineConfig& cfg);

/// Learning report over all retained policies (claim groups from the
/// policy table's claims column).
std::string run_learning(const IngestResult& ingest_result);

void write_text_file(const std::string& path, const std::string& content);

} // namespace telem::pipeline
