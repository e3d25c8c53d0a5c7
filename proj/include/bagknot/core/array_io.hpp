#pragma once

// Binary array files: little-endian float32, row-major, shape kept in the
// owning manifest. Every directory artifact in the project uses this layout.

#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace bagknot::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "array files are written in host order; big-endian hosts are unsupported");

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline void write_f32(const fs::path& path, std::span<const float> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size_bytes()));
  if (!out) throw Error("write failed: " + path.string());
}

inline std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  if (!fs::exists(path)) throw NotFoundError("missing array file: " + path.string());
  const auto bytes = fs::file_size(path);
  if (bytes != expected_count * sizeof(float)) {
    throw IntegrityError("array file " + path.string() + " holds " + std::to_string(bytes) +
                         " bytes, manifest declares " +
                         std::to_string(expected_count * sizeof(float)));
  }
  std::vector<float> data(expected_count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IntegrityError("short read: " + path.string());
  return data;
}

/// Manifest entry describing one array file.
inline json array_entry(const std::string& file, const std::vector<std::size_t>& shape,
                        std::span<const float> data) {
  return json{{"file", file},
              {"shape", shape},
              {"dtype", "float32-le"},
              {"hash", hex64(Fnv1a().update_span(data).digest())}};
}

/// Writes `data` next to the manifest and returns its entry.
inline json save_array(const fs::path& dir, const std::string& file,
                       const std::vector<std::size_t>& shape, std::span<const float> data) {
  if (element_count(shape) != data.size()) {
    throw InputError("array '" + file + "' shape does not match element count");
  }
  write_f32(dir / file, data);
  return array_entry(file, shape, data);
}

inline std::vector<float> load_array(const fs::path& dir, const json& entry) {
  const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
  auto data = read_f32(dir / entry.at("file").get<std::string>(), element_count(shape));
  if (entry.contains("hash") &&
      entry["hash"].get<std::string>() !=
          hex64(Fnv1a().update_span(std::span<const float>(data)).digest())) {
    throw IntegrityError("array file " + entry["file"].get<std::string>() +
                         " content hash mismatch");
  }
  return data;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("missing manifest: " + path.string());
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IntegrityError("malformed manifest " + path.string() + ": " + e.what());
  }
}

template <class Derived>
std::vector<float> to_f32(const Eigen::DenseBase<Derived>& m) {
  // row-major flattening regardless of the storage order of `m`
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(static_cast<float>(m(r, c)));
  return out;
}

}  // namespace bagknot::io
