#include "telem/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "telem/errors.hpp"
#include "telem/features.hpp"
#include "telem/learning.hpp"
#include "telem/time.hpp"

namespace telem::pipeline {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& value) {
    double out;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("config: bad numeric value for " + key + ": '" + value + "'");
    return out;
}

long long to_int(const std::string& key, const std::string& value) {
    const double d = to_double(key, value);
    if (d != std::floor(d)) throw ConfigError("config: expected an integer for " + key);
    return static_cast<long long>(d);
}

std::vector<double> to_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
    return out;
}

} // namespace

void PipelineConfig::validate() const {
    const bool has_files =
        !raw_records_path.empty() || !trip_list_path.empty() || !policy_table_path.empty();
    if (has_files == use_simulation)
        throw ConfigError("config: exactly one of [input] paths or a [simulate] block required");
    if (has_files &&
        (raw_records_path.empty() || trip_list_path.empty() || policy_table_path.empty()))
        throw ConfigError("config: [input] needs raw_records, trip_list and policy_table");
    if (bin_width < 2 || bin_width > 30)
        throw ConfigError("config: bin_width must lie in [2, 30]");
    if (pca_components < 1) throw ConfigError("config: pca_components must be positive");
    if (cv_k < 2) throw ConfigError("config: cv k must be at least 2");
    if (vote_threshold < 1 || vote_threshold > cv_k)
        throw ConfigError("config: vote_threshold must lie in [1, k]");
    if (use_simulation) sim.validate();
}

PipelineConfig parse_config(std::istream& in) {
    PipelineConfig cfg;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string s = trim(line);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError("config: bad section header at line " +
                                                   std::to_string(line_no));
            section = s.substr(1, s.size() - 2);
            if (section != "input" && section != "simulate" && section != "features" &&
                section != "model" && section != "cv" && section != "output")
                throw ConfigError("config: unknown section [" + section + "]");
            if (section == "simulate") cfg.use_simulation = true;
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key=value at line " + std::to_string(line_no));
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));

        if (section == "input") {
            if (key == "raw_records") cfg.raw_records_path = value;
            else if (key == "trip_list") cfg.trip_list_path = value;
            else if (key == "policy_table") cfg.policy_table_path = value;
            else throw ConfigError("config: unknown [input] key " + key);
        } else if (section == "simulate") {
            if (key == "n_policies") cfg.sim.n_policies = static_cast<int>(to_int(key, value));
            else if (key == "trips_per_policy_mean") cfg.sim.trips_per_policy_mean = to_double(key, value);
            else if (key == "trip_minutes_mean") cfg.sim.trip_minutes_mean = to_double(key, value);
            else if (key == "harsh_rates") {
                const auto rates = to_double_list(key, value);
                if (rates.size() != 4) throw ConfigError("config: harsh_rates needs 4 values");
                std::copy(rates.begin(), rates.end(), cfg.sim.harsh_rates.begin());
            } else if (key == "severe_a") cfg.sim.severe_a = to_double(key, value);
            else if (key == "severe_beta") cfg.sim.severe_learning_beta = to_double(key, value);
            else if (key == "claim_intercept") cfg.sim.claim_intercept = to_double(key, value);
            else if (key == "exposure_coef") cfg.sim.exposure_coef = to_double(key, value);
            else if (key == "cov_coefs") cfg.sim.cov_coefs = to_double_list(key, value);
            else if (key == "theta") cfg.sim.theta = to_double(key, value);
            else if (key == "defect_out_of_order") cfg.sim.defect_rates.out_of_order = to_double(key, value);
            else if (key == "defect_invalid_gps") cfg.sim.defect_rates.invalid_gps = to_double(key, value);
            else if (key == "defect_missing_keyoff") cfg.sim.defect_rates.missing_keyoff = to_double(key, value);
            else if (key == "seed") cfg.sim.seed = static_cast<std::uint64_t>(to_int(key, value));
            else throw ConfigError("config: unknown [simulate] key " + key);
        } else if (section == "features") {
            if (key == "bin_width") cfg.bin_width = static_cast<int>(to_int(key, value));
            else if (key == "pca_components") cfg.pca_components = static_cast<int>(to_int(key, value));
            else throw ConfigError("config: unknown [features] key " + key);
        } else if (section == "model") {
            if (key == "family") {
                if (value == "poisson") cfg.family = regress::Family::Poisson;
                else if (value == "negbin") cfg.family = regress::Family::NegBin;
                else throw ConfigError("config: family must be poisson or negbin");
            } else if (key == "exposure") {
                if (value == "offset") cfg.exposure_as_offset = true;
                else if (value == "logged") cfg.exposure_as_offset = false;
                else throw ConfigError("config: exposure must be offset or logged");
            } else throw ConfigError("config: unknown [model] key " + key);
        } else if (section == "cv") {
            if (key == "k") cfg.cv_k = static_cast<int>(to_int(key, value));
            else if (key == "seed") cfg.cv_seed = static_cast<std::uint64_t>(to_int(key, value));
            else if (key == "vote_threshold") cfg.vote_threshold = static_cast<int>(to_int(key, value));
            else throw ConfigError("config: unknown [cv] key " + key);
        } else if (section == "output") {
            if (key == "dir") cfg.out_dir = value;
            else throw ConfigError("config: unknown [output] key " + key);
        } else {
            throw ConfigError("config: key outside any section at line " + std::to_string(line_no));
        }
    }
    // The simulated chain must agree with the requested bin width.
    if (cfg.use_simulation && cfg.bin_width != cfg.sim.bin_config.width_h) {
        simulate::SimConfig resized = simulate::SimConfig::defaults();
        resized.bin_config = features::BinConfig::for_width(cfg.bin_width);
        const int m = resized.bin_config.m;
        resized.speed_markov = Eigen::MatrixXd::Zero(m, m);
        for (int i = 0; i < m; ++i) {
            const int lo = std::max(0, i - 1);
            const int hi = std::min(m - 1, i + 1);
            resized.speed_markov(i, i) += 0.5;
            resized.speed_markov(i, lo) += 0.25;
            resized.speed_markov(i, hi) += 0.25;
        }
        resized.n_policies = cfg.sim.n_policies;
        resized.trips_per_policy_mean = cfg.sim.trips_per_policy_mean;
        resized.trip_minutes_mean = cfg.sim.trip_minutes_mean;
        resized.harsh_rates = cfg.sim.harsh_rates;
        resized.severe_a = cfg.sim.severe_a;
        resized.severe_learning_beta = cfg.sim.severe_learning_beta;
        resized.claim_intercept = cfg.sim.claim_intercept;
        resized.exposure_coef = cfg.sim.exposure_coef;
        resized.cov_coefs = cfg.sim.cov_coefs;
        resized.theta = cfg.sim.theta;
        resized.defect_rates = cfg.sim.defect_rates;
        resized.seed = cfg.sim.seed;
        cfg.sim = std::move(resized);
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    return parse_config(in);
}

namespace {

IngestResult assemble(std::vector<ingest::RawRecord> stream,
                      const std::vector<ingest::TripListEntry>& trip_entries,
                      const Table& policy_table, IngestResult result) {
    result.records = ingest::group_by_device(std::move(stream));
    for (auto& [device, recs] : result.records) {
        ingest::reorder_chronological(recs);
        ingest::flag_calibration_records(recs);
    }

    std::map<std::string, std::vector<ingest::Trip>> trips_by_device;
    for (const auto& entry : trip_entries) {
        auto it = result.records.find(entry.device_id);
        if (it == result.records.end() || it->second.empty()) continue;
        trips_by_device[entry.device_id].push_back(
            ingest::match_trip_boundaries(entry, it->second));
    }
    for (auto& [device, trips] : trips_by_device)
        trips = ingest::filter_trips(trips, result.tally);

    const auto& ids = policy_table.categorical("policy_id");
    const auto& devices = policy_table.categorical("device_id");
    const auto& starts = policy_table.categorical("coverage_start");
    const auto& ends = policy_table.categorical("coverage_end");
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < policy_table.n_rows(); ++i) {
        const auto start = parse_timestamp(starts[i]);
        const auto end = parse_timestamp(ends[i]);
        if (!start || !end) throw DataError("policy table: bad coverage dates for " + ids[i]);
        const auto trips_it = trips_by_device.find(devices[i]);
        if (trips_it == trips_by_device.end()) {
            ++result.policies_rejected;
            continue;
        }
        auto assignment = ingest::assign_trips_to_policy(trips_it->second, ids[i], *start, *end);
        if (!assignment.policy) {
            ++result.policies_rejected;
            continue;
        }
        result.policies.push_back(std::move(*assignment.policy));
        result.device_of_policy.push_back(devices[i]);
        kept.push_back(i);
    }
    result.policy_rows = policy_table.select_rows(kept);
    return result;
}

} // namespace

IngestResult run_ingest(const PipelineConfig& cfg) {
    cfg.validate();
    IngestResult result;
    if (cfg.use_simulation) {
        auto portfolio = simulate::simulate_portfolio(cfg.sim);
        Table policy_table;
        {
            const auto& ps = portfolio.policies;
            std::vector<std::string> ids, devices, starts, ends;
            std::vector<double> claims, ages;
            for (const auto& p : ps) {
                ids.push_back(p.policy_id);
                devices.push_back(p.device_id);
                starts.push_back(format_timestamp(p.coverage_start));
                ends.push_back(format_timestamp(p.coverage_end));
                claims.push_back(p.claims);
                ages.push_back(p.age);
            }
            policy_table.add_categorical("policy_id", ids);
            policy_table.add_categorical("device_id", devices);
            policy_table.add_categorical("coverage_start", starts);
            policy_table.add_categorical("coverage_end", ends);
            policy_table.add_numeric("claims", claims);
            policy_table.add_numeric("age", ages);
            const std::size_t n_covs = ps.empty() ? 0 : ps.front().covs.size();
            for (std::size_t c = 0; c < n_covs; ++c) {
                std::vector<double> col;
                for (const auto& p : ps) col.push_back(p.covs[c]);
                policy_table.add_numeric("cov" + std::to_string(c + 1), col);
            }
        }
        return assemble(std::move(portfolio.records), portfolio.trips, policy_table,
                        std::move(result));
    }

    std::ifstream raw(cfg.raw_records_path);
    if (!raw) throw DataError("ingest: cannot open " + cfg.raw_records_path);
    auto stream = ingest::parse_raw_records(raw, result.record_counters);

    std::ifstream trips_in(cfg.trip_list_path);
    if (!trips_in) throw DataError("ingest: cannot open " + cfg.trip_list_path);
    const auto trip_entries = ingest::parse_trip_list(trips_in, result.trip_counters);

    if (!std::filesystem::exists(cfg.policy_table_path))
        throw DataError("ingest: cannot open " + cfg.policy_table_path);
    const Table policy_table = Table::read_csv(cfg.policy_table_path);
    return assemble(std::move(stream), trip_entries, policy_table, std::move(result));
}

FeatureResult build_features(const IngestResult& ingest_result, int bin_width,
                             int pca_components) {
    const auto cfg = features::BinConfig::for_width(bin_width);
    const std::size_t n = ingest_result.policies.size();
    if (n < 2) throw DataError("build_features: need at least 2 retained policies");

    std::vector<features::PolicySummary> summaries;
    Eigen::MatrixXd flat(static_cast<Eigen::Index>(n), cfg.m * cfg.m);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& policy = ingest_result.policies[i];
        const auto& recs = ingest_result.records.at(ingest_result.device_of_policy[i]);
        summaries.push_back(features::summarize_policy(policy));
        features::AccumulateStats stats;
        flat.row(static_cast<Eigen::Index>(i)) =
            features::policy_transition_matrix(policy, recs, cfg, stats).flatten().transpose();
    }

    FeatureResult out;
    out.pca_model = pca::fit(flat);
    const int k = std::min<int>(pca_components, static_cast<int>(out.pca_model.loadings.cols()));

    std::vector<std::string> ids;
    std::vector<double> distance(n), time_min(n), trips(n), avg(n), maxv(n);
    std::vector<std::vector<double>> harsh(5, std::vector<double>(n));
    std::vector<std::vector<double>> road(4, std::vector<double>(n));
    std::vector<std::vector<double>> slots(features::kNumTimeslots, std::vector<double>(n));
    std::vector<std::vector<double>> pcs(static_cast<std::size_t>(k), std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = summaries[i];
        ids.push_back(s.policy_id);
        distance[i] = s.total_distance;
        time_min[i] = s.total_time;
        trips[i] = s.num_trips;
        avg[i] = s.avg_speed;
        maxv[i] = s.max_speed;
        harsh[0][i] = s.num_acc;
        harsh[1][i] = s.num_brake;
        harsh[2][i] = s.num_left;
        harsh[3][i] = s.num_right;
        harsh[4][i] = s.num_severe;
        for (int r = 0; r < 4; ++r) road[static_cast<std::size_t>(r)][i] = s.prop_roadtype[static_cast<std::size_t>(r)];
        for (int t = 0; t < features::kNumTimeslots; ++t)
            slots[static_cast<std::size_t>(t)][i] = s.prop_time[static_cast<std::size_t>(t)];
        const Eigen::VectorXd score =
            pca::project(flat.row(static_cast<Eigen::Index>(i)).transpose(), out.pca_model, k);
        for (int c = 0; c < k; ++c) pcs[static_cast<std::size_t>(c)][i] = score[c];
    }

    Table& t = out.table;
    t.add_categorical("policy_id", ids);
    t.add_numeric("total_distance", distance);
    t.add_numeric("total_time", time_min);
    std::vector<double> hours(n);
    for (std::size_t i = 0; i < n; ++i) hours[i] = time_min[i] / 60.0;
    t.add_numeric("exposure_hours", hours);
    t.add_numeric("num_trips", trips);
    t.add_numeric("avg_speed", avg);
    t.add_numeric("max_speed", maxv);
    const char* harsh_names[5] = {"num_acc", "num_brake", "num_left", "num_right", "num_severe"};
    for (int h = 0; h < 5; ++h) t.add_numeric(harsh_names[h], harsh[static_cast<std::size_t>(h)]);
    const char* road_names[4] = {"prop_road_urban", "prop_road_extra", "prop_road_highway",
                                 "prop_road_other"};
    for (int r = 0; r < 4; ++r) t.add_numeric(road_names[r], road[static_cast<std::size_t>(r)]);
    for (int s = 0; s < features::kNumTimeslots; ++s)
        t.add_numeric("prop_time" + std::to_string(s + 1), slots[static_cast<std::size_t>(s)]);
    for (int c = 0; c < k; ++c)
        t.add_numeric("pc" + std::to_string(c + 1), pcs[static_cast<std::size_t>(c)]);

    // Response and passthrough covariates from the policy table.
    const Table& rows = ingest_result.policy_rows;
    for (const auto& col : rows.column_order()) {
        if (col == "policy_id" || col == "device_id" || col == "coverage_start" ||
            col == "coverage_end")
            continue;
        if (rows.has_numeric(col)) t.add_numeric(col, rows.numeric(col));
        else t.add_categorical(col, rows.categorical(col));
    }
    return out;
}

namespace {

regress::Exposure exposure_for(bool as_offset) {
    return as_offset ? regress::Exposure::offset("exposure_hours")
                     : regress::Exposure::logged_covariate("exposure_hours");
}

} // namespace

regress::ModelSpec make_model_spec(const Table& table, regress::Family family,
                                   bool exposure_as_offset) {
    regress::ModelSpec spec;
    spec.response = "claims";
    spec.family = family;
    spec.exposure = exposure_for(exposure_as_offset);
    spec.terms.push_back(regress::Term::numeric("avg_speed"));
    spec.terms.push_back(regress::Term::numeric("max_speed"));
    for (const char* name : {"num_acc", "num_brake", "num_left", "num_right", "num_severe"})
        spec.terms.push_back(regress::Term::numeric(name));
    // One column of each proportion block is dropped: the blocks sum to 100.
    spec.terms.push_back(regress::Term::block(
        "prop_time", {"prop_time2", "prop_time3", "prop_time4", "prop_time5", "prop_time6"}));
    spec.terms.push_back(regress::Term::block(
        "prop_road", {"prop_road_extra", "prop_road_highway", "prop_road_other"}));
    if (table.has_numeric("pc1")) spec.terms.push_back(regress::Term::numeric("pc1"));
    if (table.has_numeric("pc2")) spec.terms.push_back(regress::Term::numeric("pc2"));
    if (table.has_numeric("age")) spec.terms.push_back(regress::Term::numeric("age"));
    for (int c = 1; c <= 8; ++c) {
        const std::string cov = "cov" + std::to_string(c);
        if (table.has_numeric(cov)) spec.terms.push_back(regress::Term::numeric(cov));
    }
    return spec;
}

regress::ModelSpec make_traditional_spec(const Table& table, regress::Family family,
                                         bool exposure_as_offset) {
    regress::ModelSpec spec;
    spec.response = "claims";
    spec.family = family;
    spec.exposure = exposure_for(exposure_as_offset);
    if (table.has_numeric("age")) spec.terms.push_back(regress::Term::numeric("age"));
    return spec;
}

std::string robustness_sweep(const IngestResult& ingest_result, const PipelineConfig& cfg) {
    std::ostringstream out;
    out.precision(10);
    out << "h,deviance,rmse,mae,qs,sphs,rps,dss,chi_square\n";

    const auto emit_row = [&](const std::string& label, const evaluate::MetricsReport& m) {
        out << label << ',' << m.deviance << ',' << m.rmse << ',' << m.mae << ',' << m.qs << ','
            << m.sphs << ',' << m.rps << ',' << m.dss << ',' << m.chi_square << '\n';
    };

    for (int h = 2; h <= 30; ++h) {
        const auto features_h = build_features(ingest_result, h, cfg.pca_components);
        const auto plan = evaluate::kfold_partition(features_h.table.numeric("claims"), cfg.cv_k,
                                                    cfg.cv_seed);
        const auto spec = make_model_spec(features_h.table, cfg.family, cfg.exposure_as_offset);
        emit_row(std::to_string(h), evaluate::cross_validate(features_h.table, spec, plan));
    }

    const auto features_bench = build_features(ingest_result, cfg.bin_width, cfg.pca_components);
    const auto plan = evaluate::kfold_partition(features_bench.table.numeric("claims"), cfg.cv_k,
                                                cfg.cv_seed);
    const auto bench =
        make_traditional_spec(features_bench.table, cfg.family, cfg.exposure_as_offset);
    emit_row("traditional", evaluate::cross_validate(features_bench.table, bench, plan));
    return out.str();
}

std::string run_learning(const IngestResult& ingest_result) {
    std::vector<learning::EventArrival> arrivals;
    const bool has_claims = ingest_result.policy_rows.has_numeric("claims");
    const bool has_age = ingest_result.policy_rows.has_numeric("age");
    learning::SequenceStats stats;
    for (std::size_t i = 0; i < ingest_result.policies.size(); ++i) {
        const auto& policy = ingest_result.policies[i];
        const auto& recs = ingest_result.records.at(ingest_result.device_of_policy[i]);
        auto rows = learning::build_event_sequences(policy, recs, stats);
        for (auto& row : rows) {
            if (has_claims)
                row.claim_group = ingest_result.policy_rows.numeric("claims")[i] > 0
                                      ? learning::ClaimGroup::Claimed
                                      : learning::ClaimGroup::NoClaim;
            if (has_age)
                row.age_group = learning::age_group_for(
                    static_cast<int>(ingest_result.policy_rows.numeric("age")[i]));
        }
        arrivals.insert(arrivals.end(), rows.begin(), rows.end());
    }
    return learning::learning_report_csv(arrivals);
}

void write_text_file(const std::string& path, const std::string& content) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << content;
}

} // namespace telem::pipeline
