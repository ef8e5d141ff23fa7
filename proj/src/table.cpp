#include "telem/table.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "telem/csv.hpp"
#include "telem/errors.hpp"

namespace telem {

namespace {

bool parse_double(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

} // namespace

const std::vector<double>& Table::numeric(const std::string& name) const {
    auto it = numeric_.find(name);
    if (it == numeric_.end()) throw DataError("missing numeric column: " + name);
    return it->second;
}

const std::vector<std::string>& Table::categorical(const std::string& name) const {
    auto it = categorical_.find(name);
    if (it == categorical_.end()) throw DataError("missing categorical column: " + name);
    return it->second;
}

void Table::check_size(const std::string& name, std::size_t n) const {
    if (!order_.empty() && n != n_rows_)
        throw DataError("column " + name + " has " + std::to_string(n) + " rows, table has " +
                        std::to_string(n_rows_));
}

void Table::add_numeric(const std::string& name, std::vector<double> values) {
    check_size(name, values.size());
    if (has_column(name)) throw DataError("duplicate column: " + name);
    n_rows_ = values.size();
    order_.push_back(name);
    numeric_.emplace(name, std::move(values));
}

void Table::add_categorical(const std::string& name, std::vector<std::string> values) {
    check_size(name, values.size());
    if (has_column(name)) throw DataError("duplicate column: " + name);
    n_rows_ = values.size();
    order_.push_back(name);
    categorical_.emplace(name, std::move(values));
}

Table Table::select_rows(const std::vector<std::size_t>& rows) const {
    Table out;
    for (const auto& name : order_) {
        if (has_numeric(name)) {
            const auto& src = numeric(name);
            std::vector<double> col;
            col.reserve(rows.size());
            for (std::size_t r : rows) col.push_back(src.at(r));
            out.add_numeric(name, std::move(col));
        } else {
            const auto& src = categorical(name);
            std::vector<std::string> col;
            col.reserve(rows.size());
            for (std::size_t r : rows) col.push_back(src.at(r));
            out.add_categorical(name, std::move(col));
        }
    }
    return out;
}

Table Table::read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    DelimitedReader reader(in);
    const auto& header = reader.header();
    std::vector<std::vector<std::string>> cols(header.size());
    std::vector<std::string> fields;
    while (reader.next(fields)) {
        if (fields.size() != header.size())
            throw DataError(path + ": line " + std::to_string(reader.line_number()) +
                            " has wrong field count");
        for (std::size_t i = 0; i < header.size(); ++i) cols[i].push_back(std::move(fields[i]));
    }
    Table out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        bool all_numeric = !cols[i].empty();
        std::vector<double> nums;
        nums.reserve(cols[i].size());
        for (const auto& v : cols[i]) {
            double d;
            if (v.empty() || !parse_double(v, d)) {
                all_numeric = false;
                break;
            }
            nums.push_back(d);
        }
        if (all_numeric)
            out.add_numeric(header[i], std::move(nums));
        else
            out.add_categorical(header[i], std::move(cols[i]));
    }
    return out;
}

void Table::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    for (std::size_t i = 0; i < order_.size(); ++i) out << (i ? "," : "") << order_[i];
    out << '\n';
    out << std::setprecision(17);
    for (std::size_t r = 0; r < n_rows_; ++r) {
        for (std::size_t i = 0; i < order_.size(); ++i) {
            if (i) out << ',';
            const auto& name = order_[i];
            if (has_numeric(name))
                out << numeric(name)[r];
            else
                out << categorical(name)[r];
        }
        out << '\n';
    }
}

} // namespace telem
