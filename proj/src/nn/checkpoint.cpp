#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedbss/errors.hpp"
#include "fedbss/nn.hpp"

namespace fedbss::nn {
namespace {

constexpr const char* kMagic = "FEDBSS-PV";
constexpr const char* kVersion = "v1";

}  // namespace

void write_checkpoint(std::ostream& out, const ParamVector& params) {
  out << kMagic << ' ' << kVersion << ' ' << params.size() << '\n';
  for (float v : params.values()) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
  if (!out) throw Error("failed to write checkpoint");
}

ParamVector read_checkpoint(std::istream& in, const ParamVector& layout) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("checkpoint is empty", 0);
  const std::size_t body_offset = header.size() + 1;
  std::istringstream hs(header);
  std::string magic, version;
  std::size_t total = 0;
  if (!(hs >> magic >> version >> total) || magic != kMagic) {
    throw FormatError("not a FEDBSS-PV checkpoint header: '" + header + "'", 0);
  }
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + version, magic.size() + 1);
  if (total != layout.size()) {
    throw FormatError("checkpoint holds " + std::to_string(total) + " values, model expects " +
                          std::to_string(layout.size()),
                      0);
  }
  ParamVector out = layout.zeros_like();
  auto values = out.values();
  for (std::size_t i = 0; i < total; ++i) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
      throw FormatError("checkpoint truncated", body_offset + 4 * i);
    }
    const std::uint32_t bits = std::uint32_t{bytes[0]} | (std::uint32_t{bytes[1]} << 8) |
                               (std::uint32_t{bytes[2]} << 16) | (std::uint32_t{bytes[3]} << 24);
    values[i] = std::bit_cast<float>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after checkpoint body", body_offset + 4 * total);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    write_checkpoint(out, params);
  }
  std::filesystem::rename(tmp, path);
}

ParamVector load_checkpoint(const std::filesystem::path& path, const ParamVector& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return read_checkpoint(in, layout);
}

}  // namespace fedbss::nn
