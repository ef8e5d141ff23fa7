#include "telem/csv.hpp"

#include <algorithm>

namespace telem {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

} // namespace

void split_fields(std::string_view line, char delim, std::vector<std::string>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(delim, start);
        std::string_view field =
            pos == std::string_view::npos ? line.substr(start) : line.substr(start, pos - start);
        out.emplace_back(trim(field));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
}

DelimitedReader::DelimitedReader(std::istream& in) : in_(in) {
    std::string line;
    if (std::getline(in_, line)) {
        ++line_no_;
        auto commas = std::count(line.begin(), line.end(), ',');
        auto tabs = std::count(line.begin(), line.end(), '\t');
        delim_ = tabs > commas ? '\t' : ',';
        split_fields(line, delim_, header_);
    }
}

int DelimitedReader::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
        if (header_[i] == name) return static_cast<int>(i);
    return -1;
}

bool DelimitedReader::next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (trim(line).empty()) continue;
        split_fields(line, delim_, fields);
        return true;
    }
    return false;
}

} // namespace telem
