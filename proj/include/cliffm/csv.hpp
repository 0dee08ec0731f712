#ifndef CLIFFM_CSV_HPP
#define CLIFFM_CSV_HPP

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace cliffm {

// Minimal RFC 4180 reader/writer. Lines starting with '#' before the header
// are treated as comments (pipeline artifacts carry a provenance line there).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based source line of each row, for error messages.
  std::vector<std::size_t> lines;

  // Index of a named column; throws ParseError naming `context` if absent.
  std::size_t column(std::string_view name, std::string_view context) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text, std::string_view context);

std::string csv_escape(std::string_view field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace cliffm

#endif  // CLIFFM_CSV_HPP
