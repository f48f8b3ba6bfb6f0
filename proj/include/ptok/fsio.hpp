#pragma once

#include <string>
#include <vector>

namespace ptok {

std::string read_file(const std::string& path);
std::vector<std::string> read_lines(const std::string& path);

// Writes to <path>.tmp then renames, so readers never observe a torn file.
void write_file_atomic(const std::string& path, const std::string& content);

void ensure_dir(const std::string& path);

// Shortest round-trip decimal form of a double (printf %.17g).
std::string format_g17(double v);
double parse_double_strict(const std::string& s);

}  // namespace ptok
