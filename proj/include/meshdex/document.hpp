#pragma once

#include <chrono>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace meshdex {

using Date = std::chrono::year_month_day;

/// Parses an ISO-8601 calendar date (YYYY-MM-DD). Throws DataError.
Date parse_date(std::string_view text);
std::string format_date(const Date& date);

using LabelSet = std::set<std::string>;

/// One citation record with its gold label sets.
struct Document {
    std::string id;
    std::string title;
    std::string abstract;
    std::optional<std::string> journal;
    Date date{};
    LabelSet mesh_major;
    LabelSet supplementary;

    friend bool operator==(const Document&, const Document&) = default;
};

}  // namespace meshdex
