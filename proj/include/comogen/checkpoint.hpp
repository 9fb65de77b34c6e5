#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "comogen/nn.hpp"

namespace comogen::ckpt {

struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

// Directory holding manifest.json (names, shapes, byte offsets, endianness,
// config echo) and weights.f32 (little-endian float32, row-major, in
// manifest order).
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Tensor> tensors;

  const Tensor* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
};

void save(const std::filesystem::path& dir, const Checkpoint& c);
Checkpoint load(const std::filesystem::path& dir);

template <typename Real>
void append(Checkpoint& c, const std::string& ns, const nn::ParamList<Real>& params) {
  for (const auto* p : params) {
    Tensor t;
    t.name = ns + "/" + p->name;
    t.shape = {p->value.rows(), p->value.cols()};
    t.data.resize(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) t.data[i] = static_cast<float>(p->value.data()[i]);
    c.tensors.push_back(std::move(t));
  }
}

// Fills every parameter from `ns/<name>`; throws FormatError on a missing
// tensor or a shape mismatch.
template <typename Real>
void restore(const Checkpoint& c, const std::string& ns, const nn::ParamList<Real>& params) {
  for (auto* p : params) {
    const Tensor* t = c.find(ns + "/" + p->name);
    if (!t) throw FormatError("checkpoint lacks tensor " + ns + "/" + p->name);
    if (t->shape.size() != 2 || t->shape[0] != p->value.rows() || t->shape[1] != p->value.cols())
      throw FormatError("checkpoint tensor " + t->name + " has the wrong shape");
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<Real>(t->data[i]);
  }
}

// SHA-256 over the float32 little-endian bytes of the parameters, in order.
std::string hash_parameters(const nn::ParamList<float>& params);
std::string sha256_hex(const void* data, std::size_t size);

}  // namespace comogen::ckpt
