#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace telem {

/// Minimal delimited-text reader. The delimiter (comma or tab) is detected
/// from the header line; fields are trimmed of surrounding whitespace.
/// No quoting: none of the formats handled here embed delimiters in fields.
class DelimitedReader {
public:
    explicit DelimitedReader(std::istream& in);

    const std::vector<std::string>& header() const { return header_; }
    char delimiter() const { return delim_; }

    /// Column index of `name`, or -1.
    int column(std::string_view name) const;

    /// Reads the next row into `fields`. Returns false at end of stream.
    /// Blank lines are skipped. Rows keep their raw field count; callers
    /// decide whether a short row is malformed.
    bool next(std::vector<std::string>& fields);

    /// 1-based line number of the row last returned by next().
    std::size_t line_number() const { return line_no_; }

private:
    std::istream& in_;
    std::vector<std::string> header_;
    char delim_ = ',';
    std::size_t line_no_ = 0;
};

void split_fields(std::string_view line, char delim, std::vector<std::string>& out);

} // namespace telem
