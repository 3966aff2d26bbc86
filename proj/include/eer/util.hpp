#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <spdlog/spdlog.h>

namespace eer {

/// 64-bit FNV-1a. Stable across platforms; used for fingerprints and
/// file hashes in run metadata.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);
std::string file_fingerprint(const std::filesystem::path& path);

/// Derive an independent RNG seed from a parent seed and a label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Applies EER_LOG={debug,info,warn} to the default spdlog logger. Called
/// once by the CLI and test mains.
void configure_logging_from_env();

/// Reads a text file, calling `fn(line, line_number)` for every non-empty
/// line. Line numbers are 1-based.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(const std::string&, std::size_t)>& fn);

std::string read_file(const std::filesystem::path& path);
/// Writes via a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Writes a directory atomically: `fill` populates a temp directory which is
/// then renamed over `dir`.
void write_dir_atomic(const std::filesystem::path& dir,
                      const std::function<void(const std::filesystem::path&)>& fill);

}  // namespace eer
