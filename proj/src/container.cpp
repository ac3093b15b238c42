#include "dietfield/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dietfield/error.hpp"

namespace dietfield::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& bytes, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError(what + ": truncated file");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

const diff::Tensor* ContainerContents::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_container(const Magic& magic, std::uint32_t version, const nlohmann::json& header,
                             const std::vector<std::pair<std::string, diff::Tensor>>& tensors) {
  nlohmann::json doc = header.is_null() ? nlohmann::json::object() : header;
  nlohmann::json directory = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    directory.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  }
  doc["tensors"] = std::move(directory);
  const std::string text = doc.dump();

  std::string out;
  out.append(magic.data(), magic.size());
  put<std::uint32_t>(out, version);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : tensors) {
    out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  return out;
}

ContainerContents decode_container(const std::string& bytes, const Magic& magic, std::uint32_t version,
                                   const std::string& what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic.data(), 4) != 0) {
    throw FormatError(what + ": bad magic, expected '" + std::string(magic.data(), 4) + "'");
  }
  std::size_t pos = 4;
  const auto file_version = get<std::uint32_t>(bytes, pos, what);
  if (file_version != version) {
    throw FormatError(what + ": unsupported version " + std::to_string(file_version) + " (expected " +
                      std::to_string(version) + ")");
  }
  const auto header_len = get<std::uint64_t>(bytes, pos, what);
  if (header_len > bytes.size() - pos) throw FormatError(what + ": truncated header");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed JSON header: " + e.what());
  }
  pos += header_len;
  const std::size_t data_start = pos;
  if (!doc.is_object() || !doc.contains("tensors") || !doc["tensors"].is_array()) {
    throw FormatError(what + ": header lacks a tensor directory");
  }
  ContainerContents contents;
  try {
    for (const auto& entry : doc["tensors"]) {
      const std::string name = entry.at("name").get<std::string>();
      const diff::Shape shape = entry.at("shape").get<diff::Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      for (auto d : shape) {
        if (d < 0) throw FormatError(what + ": tensor '" + name + "' has a negative dimension");
      }
      const std::uint64_t nbytes = static_cast<std::uint64_t>(diff::shape_size(shape)) * sizeof(float);
      if (offset > bytes.size() - data_start || nbytes > bytes.size() - data_start - offset) {
        throw FormatError(what + ": payload of tensor '" + name + "' runs past end of file");
      }
      std::vector<float> values(static_cast<std::size_t>(diff::shape_size(shape)));
      std::memcpy(values.data(), bytes.data() + data_start + offset, nbytes);
      contents.tensors.emplace_back(name, diff::Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed tensor directory: " + e.what());
  }
  doc.erase("tensors");
  contents.header = std::move(doc);
  return contents;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                     const nlohmann::json& header, const std::vector<std::pair<std::string, diff::Tensor>>& tensors) {
  write_file(path, encode_container(magic, version, header, tensors));
}

ContainerContents read_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version) {
  return decode_container(read_file(path), magic, version, path.string());
}

}  // namespace dietfield::io
