#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace telem {

/// Column-oriented table holding the per-policy feature rows. Columns are
/// either numeric or categorical (string-valued). Column order is preserved
/// for CSV round-trips.
class Table {
public:
    std::size_t n_rows() const { return n_rows_; }
    const std::vector<std::string>& column_order() const { return order_; }

    bool has_numeric(const std::string& name) const { return numeric_.count(name) > 0; }
    bool has_categorical(const std::string& name) const { return categorical_.count(name) > 0; }
    bool has_column(const std::string& name) const {
        return has_numeric(name) || has_categorical(name);
    }

    const std::vector<double>& numeric(const std::string& name) const;
    const std::vector<std::string>& categorical(const std::string& name) const;

    void add_numeric(const std::string& name, std::vector<double> values);
    void add_categorical(const std::string& name, std::vector<std::string> values);

    /// Row subset, preserving column order.
    Table select_rows(const std::vector<std::size_t>& rows) const;

    /// Reads a delimited file; a column is numeric when every non-empty value
    /// parses as a double, categorical otherwise.
    static Table read_csv(const std::string& path);

    void write_csv(const std::string& path) const;

private:
    std::size_t n_rows_ = 0;
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::vector<double>> numeric_;
    std::unordered_map<std::string, std::vector<std::string>> categorical_;

    void check_size(const std::string& name, std::size_t n) const;
};

} // namespace telem
