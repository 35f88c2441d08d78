// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ckptbench::fsutil {

/// Whole-file read; throws MissingFile if absent, IoError otherwise.
std::string read_file(const std::filesystem::path& path);

/// Writes `text` to a temporary sibling and renames it over `path`, so
/// readers see either nothing or the complete contents. With `durable` the
/// data and the directory entry are synced.
void write_file_atomic(const std::filesystem::path& path, std::string_view text, bool durable);

void sync_directory(const std::filesystem::path& dir);

} // namespace ckptbench::fsutil
