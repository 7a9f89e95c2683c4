#pragma once

#include <filesystem>

namespace ttcloc {

/// Entry point of the `ttcloc` executable. Exit codes: 0 success,
/// 1 invalid input or configuration, 2 numerical failure.
int run_cli(int argc, char** argv);

/// `path` itself when it names a file, otherwise `path/manifest.json`.
std::filesystem::path manifest_path(const std::filesystem::path& path);

}  // namespace ttcloc
