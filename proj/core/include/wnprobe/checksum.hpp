// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace wnprobe {

// "sha256:<hex>" digests, the form used by every manifest.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(std::string_view bytes);

}  // namespace wnprobe
