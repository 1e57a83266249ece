#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace nvdiff {

// SHA-1 of "blob <size>\0" + content, as git hashes file contents.
std::string git_blob_sha1(std::string_view content);

// Writes dir/manifest.json mapping every regular file under dir (except the manifest
// itself) to its size and blob hash. Keys are sorted relative paths.
void write_manifest(const std::filesystem::path& dir);

}  // namespace nvdiff
