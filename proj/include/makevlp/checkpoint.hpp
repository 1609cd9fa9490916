#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "makevlp/errors.hpp"
#include "makevlp/tensor.hpp"

namespace makevlp {

inline constexpr int kCheckpointVersion = 1;

// Checkpoint layout: one JSON header line (format tag, version, free-form
// meta, tensor directory with offsets relative to the data section), then
// raw little-endian float32 payloads back to back.

inline void save_tensor_file(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                             const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json header;
  header["format"] = "makevlp-ckpt";
  header["version"] = kCheckpointVersion;
  header["meta"] = meta;
  nlohmann::ordered_json dir = nlohmann::ordered_json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t->shape;
    e["offset"] = offset;
    dir.push_back(std::move(e));
    offset += t->numel() * static_cast<int64_t>(sizeof(float));
  }
  header["tensors"] = std::move(dir);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot write " + path.string());
  f << header.dump() << "\n";
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->v.data()),
            static_cast<std::streamsize>(t->v.size() * sizeof(float)));
  if (!f) throw IoFailure("short write to " + path.string());
}

struct LoadedTensorFile {
  nlohmann::json meta;
  std::vector<std::string> order;  // tensor names in file order
  std::map<std::string, Tensor> tensors;
};

inline LoadedTensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path.string());
  std::string header_line;
  if (!std::getline(f, header_line)) throw IoFailure("empty checkpoint: " + path.string());
  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "makevlp-ckpt")
    throw IoFailure("not a checkpoint file: " + path.string());
  if (header.value("version", -1) != kCheckpointVersion)
    throw VersionMismatch("unsupported checkpoint version in " + path.string());

  LoadedTensorFile out;
  out.meta = header.value("meta", nlohmann::json::object());
  const std::streampos data_start = f.tellg();
  for (const auto& e : header.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    Tensor t(e.at("shape").get<std::vector<int>>());
    f.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<int64_t>()));
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(t.v.size() * sizeof(float)))
      throw IoFailure("truncated checkpoint: " + path.string());
    out.order.push_back(name);
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace makevlp
