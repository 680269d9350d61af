#include "fsvos/checkpoint.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fsvos/errors.hpp"

namespace fsvos {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr int kFormatVersion = 1;

std::string hex(const unsigned char* digest, std::size_t n) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw IoError("checkpoint manifest not found: " + path.string());
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(bytes.data(), bytes.size(), digest);
  return hex(digest, SHA256_DIGEST_LENGTH);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  return hex(digest, SHA256_DIGEST_LENGTH);
}

std::string save_checkpoint(const ModelState& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto blob = model.parameter_bytes();
  const std::string hash = sha256_hex(blob);

  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"dtype", "float64"},
                      {"frozen", p.frozen},
                      {"offset", offset},
                      {"count", p.value.numel()}});
    offset += p.value.numel();
  }
  nlohmann::json manifest = {{"format_version", kFormatVersion},
                             {"architecture", model.config},
                             {"parameters", params},
                             {"weights_file", "weights.bin"},
                             {"weights_sha256", hash},
                             {"metadata", model.metadata}};

  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "weights.bin").string());
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to " + (dir / "weights.bin").string());
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  return hash;
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  if (!manifest.contains("weights_sha256")) throw ValidationError("manifest has no weights_sha256");
  return manifest.at("weights_sha256").get<std::string>();
}

ModelState load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      throw ValidationError("unsupported checkpoint format version");
    }
    const auto blob = read_file(dir / manifest.at("weights_file").get<std::string>());
    if (sha256_hex(blob) != manifest.at("weights_sha256").get<std::string>()) {
      throw ValidationError("checkpoint weights hash mismatch in " + dir.string());
    }
    ModelState model(manifest.at("architecture").get<ModelConfig>());
    model.metadata = manifest.value("metadata", nlohmann::json::object());
    std::size_t expected = 0;
    for (const auto& p : manifest.at("parameters")) {
      if (p.at("dtype").get<std::string>() != "float64") throw ValidationError("unsupported dtype");
      const Shape shape = p.at("shape").get<Shape>();
      const std::size_t count = p.at("count").get<std::size_t>();
      const std::size_t offset = p.at("offset").get<std::size_t>();
      if (count != shape_numel(shape) || offset != expected) {
        throw ValidationError("inconsistent parameter table entry '" + p.at("name").get<std::string>() + "'");
      }
      if ((offset + count) * sizeof(double) > blob.size()) throw ValidationError("weights file is truncated");
      std::vector<double> values(count);
      std::memcpy(values.data(), blob.data() + offset * sizeof(double), count * sizeof(double));
      model.add(p.at("name").get<std::string>(), Tensor(shape, std::move(values)), p.at("frozen").get<bool>());
      expected += count;
    }
    if (expected * sizeof(double) != blob.size()) throw ValidationError("weights file size does not match manifest");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace fsvos
