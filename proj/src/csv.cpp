#include "cliffm/csv.hpp"

#include <fstream>
#include <sstream>

#include "cliffm/common.hpp"

namespace cliffm {

std::size_t CsvTable::column(std::string_view name,
                             std::string_view context) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ParseError(std::string(context) + ": missing column '" +
                   std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text, std::string_view context) {
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t record_line = 1;
  bool header_done = false;

  auto finish_record = [&]() {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
    bool blank = record.size() == 1 && record[0].empty();
    bool comment = !header_done && !record.empty() && !record[0].empty() &&
                   record[0][0] == '#';
    if (!blank && !comment) {
      if (!header_done) {
        table.header = std::move(record);
        header_done = true;
      } else {
        if (record.size() != table.header.size())
          throw ParseError(std::string(context) + " line " +
                           std::to_string(record_line) + ": expected " +
                           std::to_string(table.header.size()) +
                           " fields, got " + std::to_string(record.size()));
        table.rows.push_back(std::move(record));
        table.lines.push_back(record_line);
      }
    }
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field_started || field.empty()) {
          in_quotes = true;
          field_started = true;
        } else {
          field.push_back(c);
        }
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
        break;
      case '\r':
        break;
      case '\n':
        finish_record();
        ++line;
        record_line = line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes)
    throw ParseError(std::string(context) + ": unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) finish_record();
  if (!header_done)
    throw ParseError(std::string(context) + ": missing header row");
  // Strip a UTF-8 byte order mark from the first header cell.
  if (!table.header.empty() && table.header[0].rfind("\xEF\xBB\xBF", 0) == 0)
    table.header[0].erase(0, 3);
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path.filename().string());
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos)
    return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

}  // namespace cliffm
