#pragma once

#include <string>
#include <vector>

namespace fairstg::csv {

// Minimal CSV: comma separated, no quoting, CRLF tolerated. Row/column
// positions in error messages are 1-based.
std::vector<std::vector<std::string>> read_rows(const std::string& path);

void write_rows(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

double parse_double(const std::string& s, int row, int col);

} // namespace fairstg::csv
