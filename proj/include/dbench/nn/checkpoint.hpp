#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/nn/models.hpp"

namespace dbench::nn {

// Binary checkpoint: "DBCKPT01", u32 count, then per tensor
// (u32 name length, name, i32 n c h w, float32 payload). Little-endian.
inline constexpr char kCheckpointMagic[8] = {'D', 'B', 'C', 'K', 'P', 'T', '0', '1'};

template <class T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorKind::io, "cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  const auto state = model.state();
  const auto count = static_cast<std::uint32_t>(state.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& s : state) {
    const auto len = static_cast<std::uint32_t>(s.name.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(s.name.data(), len);
    const std::int32_t dims[4] = {s.tensor->shape.n, s.tensor->shape.c, s.tensor->shape.h, s.tensor->shape.w};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    std::vector<float> buf(s.tensor->data.begin(), s.tensor->data.end());
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  }
  require(bool(out), ErrorKind::io, "short write on checkpoint " + path.string());
}

template <class T>
void load_checkpoint(Model<T>& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::missing_input, "checkpoint not found: " + path.string());
  char magic[8];
  in.read(magic, 8);
  require(in && std::memcmp(magic, kCheckpointMagic, 8) == 0, ErrorKind::integrity,
          "not a checkpoint file: " + path.string());
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  auto state = model.state();
  require(count == state.size(), ErrorKind::shape,
          "checkpoint " + path.string() + " has " + std::to_string(count) + " tensors, model expects " +
              std::to_string(state.size()));
  for (auto& s : state) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::int32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    require(in && name == s.name && shape == s.tensor->shape, ErrorKind::shape,
            "checkpoint tensor '" + name + "' does not match model tensor '" + s.name + "'");
    std::vector<float> buf(shape.size());
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
    require(bool(in), ErrorKind::integrity, "truncated checkpoint " + path.string());
    s.tensor->data.assign(buf.begin(), buf.end());
  }
}

}  // namespace dbench::nn
