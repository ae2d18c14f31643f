// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace pasta {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// SHA-256 of a file's bytes; throws Error(Io) if unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// First 8 bytes of the SHA-256 digest, big-endian. Used to seed per-prompt RNG streams.
std::uint64_t hash64(std::string_view data);

/// Rewrites CRLF and lone CR to LF.
std::string normalize_newlines(std::string_view text);

std::string base64_encode(std::string_view bytes);

}  // namespace pasta
