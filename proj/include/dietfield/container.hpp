#pragma once

// Little-endian tensor container shared by the ViT weight file and training checkpoints:
//
//   magic       4 bytes ("VITW", "DNRF", ...)
//   version     u32
//   header_len  u64
//   header      header_len bytes of UTF-8 JSON; an object whose "tensors" member is the ordered
//               directory [{"name", "shape", "offset"}], offset in bytes from the start of the data
//   data        raw float32 payloads, concatenated in directory order

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dietfield/tensor.hpp"

namespace dietfield::io {

using Magic = std::array<char, 4>;

struct ContainerContents {
  nlohmann::json header;  // everything except "tensors"
  std::vector<std::pair<std::string, diff::Tensor>> tensors;

  const diff::Tensor* find(const std::string& name) const;
};

std::string encode_container(const Magic& magic, std::uint32_t version, const nlohmann::json& header,
                             const std::vector<std::pair<std::string, diff::Tensor>>& tensors);
ContainerContents decode_container(const std::string& bytes, const Magic& magic, std::uint32_t version,
                                   const std::string& what);

void write_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                     const nlohmann::json& header, const std::vector<std::pair<std::string, diff::Tensor>>& tensors);
ContainerContents read_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dietfield::io
