#pragma once

// Weight-file layout (all integers little-endian):
//
//   8 bytes   magic "POLEXNB\0"
//   u32       version
//   u32 + N   architecture descriptor text (Architecture::describe())
//   u32       parameter count
//   per parameter, in name order:
//     u32 + N name, u32 rows, u32 cols, rows*cols IEEE-754 doubles (column-major)

#include <filesystem>
#include <string>

#include "polex/network.hpp"

namespace polex {

struct VersionError : FormatError {
  using FormatError::FormatError;
};

std::string encode_bundle(const NetworkBundle& net);
NetworkBundle decode_bundle(const std::string& bytes);

void save_bundle(const NetworkBundle& net, const std::filesystem::path& path);
NetworkBundle load_bundle(const std::filesystem::path& path);

}  // namespace polex
