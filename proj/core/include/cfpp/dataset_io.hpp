#pragma once

#include "cfpp/event.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace cfpp {

/// Raised for malformed dataset text; `line()` is 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    [[nodiscard]] std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// JSONL layout: an optional header object
//   {"mark_count":..,"category_count":..,"default_horizon":..,"mark_labels":[..]}
// followed by one sequence object per line
//   {"user_id":"u1","category":0|null,"horizon":100.0,"events":[{"t":1.5,"m":2}]}
// Without a header, mark_count and category_count are inferred from the records.

[[nodiscard]] Dataset read_dataset(std::istream& in);
void write_dataset(std::ostream& out, const Dataset& data);

[[nodiscard]] Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& path);

/// One event per row: user_id,t,m,category (category empty when absent).
void write_dataset_csv(std::ostream& out, const Dataset& data);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Shortest decimal text that parses back to the same double.
[[nodiscard]] std::string format_double(double v);

}  // namespace cfpp
