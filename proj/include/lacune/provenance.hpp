#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacune/volume.hpp"

namespace lacune {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

template <class T>
std::string sha256_of(const Grid3<T>& v) {
  return sha256_hex(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(v.data().data()),
                                                   v.data().size() * sizeof(T)));
}

/// Writes `<output>.provenance.json`.
void write_provenance(const std::filesystem::path& output, const nlohmann::json& record);
std::filesystem::path provenance_path(const std::filesystem::path& output);

}  // namespace lacune
