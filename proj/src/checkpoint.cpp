#include "smg/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace smg::backbone {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'S', 'M', 'G', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == bytes_.size(); }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8(const char* what) { return take(1, what)[0]; }

  std::uint16_t u16(const char* what) {
    auto s = take(2, what);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Metadata parse_metadata(std::span<const std::uint8_t> text, std::size_t base) {
  Metadata meta;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = start;
    while (end < text.size() && text[end] != '\n') ++end;
    if (end == text.size()) throw FormatError("metadata line not newline-terminated", base + start);
    const std::string line(text.begin() + static_cast<std::ptrdiff_t>(start), text.begin() + static_cast<std::ptrdiff_t>(end));
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("metadata line without key=value", base + start);
    if (!meta.emplace(line.substr(0, eq), line.substr(eq + 1)).second) {
      throw FormatError("duplicate metadata key " + line.substr(0, eq), base + start);
    }
    start = end + 1;
  }
  return meta;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& params, const Metadata& meta) {
  std::string text;
  for (const auto& [key, value] : meta) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw ArgumentError("metadata entry '" + key + "' cannot be encoded as a key=value line");
    }
    text += key + "=" + value + "\n";
  }
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& entry : params.entries()) {
    const auto& value = entry.var.value();
    if (entry.name.size() > 0xFFFF) throw ArgumentError("tensor name too long: " + entry.name.substr(0, 32));
    if (value.rank() > 0xFF) throw ArgumentError("tensor rank too large for " + entry.name);
    put_u16(out, static_cast<std::uint16_t>(entry.name.size()));
    out.insert(out.end(), entry.name.begin(), entry.name.end());
    out.push_back(static_cast<std::uint8_t>(value.rank()));
    for (int d : value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.reserve(out.size() + 4 * value.size());
    for (float v : value.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(kMagic.size(), "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw FormatError("bad magic, not an SMG1 checkpoint", 0);
  const std::uint32_t meta_len = in.u32("metadata length");
  const std::size_t meta_offset = in.offset();
  Checkpoint ckpt;
  ckpt.meta = parse_metadata(in.take(meta_len, "metadata"), meta_offset);
  const std::uint32_t tensors = in.u32("tensor count");
  for (std::uint32_t t = 0; t < tensors; ++t) {
    const std::size_t record = in.offset();
    const std::uint16_t name_len = in.u16("tensor name length");
    const auto name_bytes = in.take(name_len, "tensor name");
    std::string name(name_bytes.begin(), name_bytes.end());
    if (name.empty()) throw FormatError("empty tensor name", record);
    if (ckpt.params.contains(name)) throw FormatError("duplicate tensor " + name, record);
    const std::uint8_t rank = in.u8("tensor rank");
    Shape shape;
    std::uint64_t count = 1;
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = in.u32("tensor dims");
      if (d > 0x7FFFFFFFu) throw FormatError("tensor dimension too large", in.offset() - 4);
      shape.push_back(static_cast<int>(d));
      count *= d;
    }
    if (count * 4 > bytes.size()) throw FormatError("truncated tensor values for " + name, in.offset());
    const auto raw = in.take(static_cast<std::size_t>(count) * 4, "tensor values");
    std::vector<float> values(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) | (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
      values[i] = std::bit_cast<float>(bits);
    }
    ckpt.params.add(name, Tensor<float>(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw FormatError("trailing bytes after the last tensor", in.offset());
  return ckpt;
}

void save_checkpoint(const ParamStore& params, const Metadata& meta, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params, meta);
  // Write-then-rename so readers never observe a half-written file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return hex;
}

const std::string& meta_get(const Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

int meta_int(const Metadata& meta, const std::string& key) {
  const auto& s = meta_get(meta, key);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("metadata '" + key + "' is not an integer");
  return v;
}

double meta_double(const Metadata& meta, const std::string& key) {
  const auto& s = meta_get(meta, key);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("metadata '" + key + "' is not a number");
  return v;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace smg::backbone
