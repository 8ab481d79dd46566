#include "lacune/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "lacune/error.hpp"
#include "lacune/provenance.hpp"

namespace lacune {

namespace {
constexpr char kMagic[8] = {'L', 'A', 'C', 'U', 'N', 'E', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kFormat = "lacune-checkpoint/1";
}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) { return path.string() + ".json"; }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write checkpoint " + path.string());
    const std::uint64_t n = ckpt.weights.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(ckpt.weights.data()), static_cast<std::streamsize>(n * sizeof(float)));
    require(static_cast<bool>(out), ErrorCode::io, "short write on " + path.string());
  }
  nlohmann::json side = ckpt.metadata;
  side["format"] = kFormat;
  side["kind"] = ckpt.kind;
  side["weight_count"] = ckpt.weights.size();
  side["weights_sha256"] = sha256_file(path);
  std::ofstream(sidecar_path(path)) << side.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::missing_file, "checkpoint not found: " + path.string());
  require(std::filesystem::exists(sidecar_path(path)), ErrorCode::missing_file,
          "checkpoint sidecar not found: " + sidecar_path(path).string());
  nlohmann::json side;
  try {
    std::ifstream(sidecar_path(path)) >> side;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, "bad checkpoint sidecar: " + std::string(e.what()));
  }
  require(side.value("format", "") == kFormat, ErrorCode::parse, "unknown checkpoint format in " + path.string());
  require(side.value("weights_sha256", "") == sha256_file(path), ErrorCode::parse,
          "checkpoint weights do not match sidecar hash: " + path.string());

  std::ifstream in(path, std::ios::binary);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  require(in && std::memcmp(magic, kMagic, sizeof kMagic) == 0 && version == kVersion, ErrorCode::parse,
          "not a lacune checkpoint: " + path.string());
  Checkpoint c;
  c.weights.resize(n);
  in.read(reinterpret_cast<char*>(c.weights.data()), static_cast<std::streamsize>(n * sizeof(float)));
  require(static_cast<bool>(in), ErrorCode::parse, "truncated checkpoint: " + path.string());
  c.kind = side.at("kind").get<std::string>();
  c.metadata = side;
  return c;
}

}  // namespace lacune
