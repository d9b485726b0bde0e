#ifndef UTOC_IO_HPP
#define UTOC_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace utoc {

/// Shortest-stable text form used in every artifact: 17 significant digits.
std::string fmt17(double value);

/// Comma-joined row of fmt17 values terminated by a newline.
std::string csv_row(const std::vector<double>& values);

/// Writes via a sibling temporary file and rename so readers never see a partial file.
/// Throws Error(Io) when the directory or file cannot be written.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace utoc

#endif  // UTOC_IO_HPP
