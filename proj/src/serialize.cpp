#include "polex/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace polex {
namespace {

constexpr char kMagic[8] = {'P', 'O', 'L', 'E', 'X', 'N', 'B', '\0'};

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("corrupt weight file: truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_bundle(const NetworkBundle& net) {
  net.validate();
  std::string out(kMagic, 8);
  put_u32(out, net.version);
  put_str(out, net.arch.describe());
  put_u32(out, static_cast<std::uint32_t>(net.params.size()));
  for (const auto& [name, m] : net.params) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  return out;
}

NetworkBundle decode_bundle(const std::string& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError("corrupt weight file: bad magic");
  NetworkBundle net;
  net.version = r.u32();
  if (net.version != kBundleVersion)
    throw VersionError("weight file version " + std::to_string(net.version) + " is not supported (expected " +
                       std::to_string(kBundleVersion) + ")");
  net.arch = Architecture::parse(r.str());
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    Matrix m(rows, cols);
    r.raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    net.params.emplace(std::move(name), std::move(m));
  }
  if (!r.done()) throw FormatError("corrupt weight file: trailing bytes");
  try {
    net.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("corrupt weight file: ") + e.what());
  }
  return net;
}

void save_bundle(const NetworkBundle& net, const std::filesystem::path& path) {
  const std::string bytes = encode_bundle(net);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

NetworkBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_bundle(ss.str());
}

}  // namespace polex
