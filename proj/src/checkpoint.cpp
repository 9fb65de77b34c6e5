#include "comogen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "comogen/error.hpp"

namespace comogen::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void write_floats(std::ofstream& out, const std::vector<float>& data) {
  std::vector<std::uint32_t> buf(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], sizeof bits);
    buf[i] = to_little(bits);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& t : tensors)
    if (t.name.rfind(prefix, 0) == 0) return true;
  return false;
}

void save(const fs::path& dir, const Checkpoint& c) {
  fs::create_directories(dir);
  json entries = json::array();
  std::uint64_t offset = 0;
  {
    std::ofstream out(dir / "weights.f32", std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (dir / "weights.f32").string());
    for (const auto& t : c.tensors) {
      std::int64_t count = 1;
      for (auto s : t.shape) count *= s;
      if (count != static_cast<std::int64_t>(t.data.size())) throw FormatError("tensor " + t.name + " shape/data mismatch");
      write_floats(out, t.data);
      entries.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"bytes", t.data.size() * 4}});
      offset += t.data.size() * 4;
    }
    if (!out) throw FormatError("write failed: " + (dir / "weights.f32").string());
  }
  json manifest = c.meta;
  manifest["format"] = "comogen-checkpoint";
  manifest["version"] = 1;
  manifest["endianness"] = "little";
  manifest["dtype"] = "float32";
  manifest["total_bytes"] = offset;
  manifest["tensors"] = entries;
  std::ofstream mout(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  mout << manifest.dump(2) << '\n';
  if (!mout) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

Checkpoint load(const fs::path& dir) {
  std::ifstream min(dir / "manifest.json");
  if (!min) throw FormatError("checkpoint has no manifest.json: " + dir.string());
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "comogen-checkpoint") throw FormatError("not a checkpoint: " + dir.string());
  if (manifest.value("endianness", "") != "little" || manifest.value("dtype", "") != "float32")
    throw FormatError("unsupported checkpoint encoding");

  std::ifstream in(dir / "weights.f32", std::ios::binary);
  if (!in) throw FormatError("checkpoint has no weights.f32: " + dir.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  if (file_size != manifest.at("total_bytes").get<std::uint64_t>())
    throw FormatError("weights.f32 size disagrees with the manifest");

  Checkpoint c;
  for (const auto& e : manifest.at("tensors")) {
    Tensor t;
    t.name = e.at("name");
    t.shape = e.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto bytes = e.at("bytes").get<std::uint64_t>();
    std::int64_t count = 1;
    for (auto s : t.shape) count *= s;
    if (static_cast<std::uint64_t>(count) * 4 != bytes || offset + bytes > file_size)
      throw FormatError("tensor " + t.name + " has an inconsistent manifest entry");
    std::vector<std::uint32_t> buf(static_cast<std::size_t>(count));
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    t.data.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const std::uint32_t bits = to_little(buf[i]);
      std::memcpy(&t.data[i], &bits, sizeof bits);
    }
    c.tensors.push_back(std::move(t));
  }
  manifest.erase("tensors");
  c.meta = std::move(manifest);
  return c;
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string hash_parameters(const nn::ParamList<float>& params) {
  std::vector<std::uint32_t> bytes;
  for (const auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, p->value.data() + i, sizeof bits);
      bytes.push_back(to_little(bits));
    }
  }
  return sha256_hex(bytes.data(), bytes.size() * 4);
}

}  // namespace comogen::ckpt
