#include "comofusion/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "comofusion/errors.hpp"

namespace comofusion {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'M', 'F', 'A', 'R', 'C', 'H', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const Shape& s = t.shape();
    header["tensors"].push_back({{"name", name},
                                 {"shape", {s.n, s.c, s.h, s.w}},
                                 {"offset", offset},
                                 {"count", t.numel()}});
    offset += t.numel();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.tensors) {
      os.write(reinterpret_cast<const char*>(t.raw()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move archive into place at " + path.string() + ": " + ec.message());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open archive " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw IoError(path.string() + " is not a checkpoint archive");
  const std::uint64_t header_len = read_u64(is);
  const auto file_size = std::filesystem::file_size(path);
  if (!is || header_len > file_size) throw IoError("corrupt archive header in " + path.string());
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw IoError("truncated archive header in " + path.string());

  Archive archive;
  try {
    archive.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed archive header in " + path.string() + ": " + e.what());
  }
  const std::uint64_t payload_start = kMagic.size() + sizeof(std::uint64_t) + header_len;
  const std::uint64_t payload_elems = (file_size - payload_start) / sizeof(double);
  std::vector<double> payload(payload_elems);
  is.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload_elems * sizeof(double)));
  if (!is) throw IoError("truncated archive payload in " + path.string());

  try {
    for (const auto& entry : archive.meta.at("tensors")) {
      const auto shape = entry.at("shape").get<std::vector<int>>();
      if (shape.size() != 4) throw IoError("bad tensor rank in " + path.string());
      const Shape s{shape[0], shape[1], shape[2], shape[3]};
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (count != s.numel() || offset + count > payload.size()) {
        throw IoError("tensor " + entry.at("name").get<std::string>() + " out of bounds in " +
                      path.string());
      }
      std::vector<double> data(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                               payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
      archive.tensors.emplace(entry.at("name").get<std::string>(), Tensor(s, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed tensor index in " + path.string() + ": " + e.what());
  }
  archive.meta.erase("tensors");
  return archive;
}

}  // namespace comofusion
