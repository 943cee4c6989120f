#pragma once

#include <filesystem>
#include <string>

namespace mdfm {

/// Writes to a temporary sibling and renames over the target, so readers
/// never see a partial file. Creates parent directories.
void atomic_write_text(const std::filesystem::path &path, const std::string &content);
void atomic_write_binary(const std::filesystem::path &path, const void *data,
                         std::size_t bytes);

std::string read_text_file(const std::filesystem::path &path);

} // namespace mdfm
