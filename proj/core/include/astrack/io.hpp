#pragma once

#include <string>
#include <string_view>

namespace astrack {

/// Writes via a temp file in the same directory plus rename, so readers
/// never observe a partially written file.
void write_file_atomic(const std::string& path, std::string_view content);

std::string read_file(const std::string& path);

} // namespace astrack
