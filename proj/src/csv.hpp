#pragma once

// Minimal RFC 4180 reader/writer: comma separated, double-quoted fields with
// "" escapes, LF or CRLF line ends.

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace serprank::csv {

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  /// Reads the next record. Returns false at end of input.
  bool next(std::vector<std::string>& fields);

  /// Physical line on which the last returned record started (1-based).
  std::size_t line_no() const noexcept { return record_line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 1;
  std::size_t record_line_ = 0;
};

/// Quotes a field when it contains a delimiter, quote or line break.
std::string quote(std::string_view field);

/// Always quotes; used for list-valued cells.
std::string quote_always(std::string_view field);

// Field parsers. All return nullopt on any malformed input.
std::optional<std::int64_t> parse_int(std::string_view s);
std::optional<double> parse_double(std::string_view s);
std::optional<std::vector<std::int64_t>> parse_int_list(std::string_view s);

std::string join_ints(const std::vector<std::int64_t>& values);

}  // namespace serprank::csv
