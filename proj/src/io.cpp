#include "phaseforge/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

namespace phaseforge::io {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

namespace {

std::string npy_header(const std::string& descr, const Shape& shape) {
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) dims += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) dims += ',';
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t total = 10 + dict.size() + 1;
  dict.append((64 - total % 64) % 64, ' ');
  dict += '\n';
  std::string out = "\x93NUMPY";
  out += char(1);
  out += char(0);
  const auto len = std::uint16_t(dict.size());
  out += char(len & 0xff);
  out += char(len >> 8);
  return out + dict;
}

template <typename T>
void append_raw(std::string& out, const T* data, std::size_t count) {
  out.append(reinterpret_cast<const char*>(data), count * sizeof(T));
}

}  // namespace

std::string encode_npy(const Tensor& t) {
  std::string out = npy_header("<f8", t.shape());
  std::vector<double> wide(t.data().begin(), t.data().end());
  append_raw(out, wide.data(), wide.size());
  return out;
}

std::string encode_npy_u16(const Shape& shape, const std::vector<std::uint16_t>& data) {
  if (shape_size(shape) != data.size()) throw ConfigError("encode_npy_u16: shape does not match data");
  std::string out = npy_header("<u2", shape);
  append_raw(out, data.data(), data.size());
  return out;
}

NpyArray decode_npy(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) throw IoError("not an NPY file");
  const int major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len, offset;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw IoError("truncated NPY header");
    header_len = 0;
    for (int i = 3; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + i]);
    offset = 12;
  } else {
    throw IoError("unsupported NPY version " + std::to_string(major));
  }
  if (bytes.size() < offset + header_len) throw IoError("truncated NPY header");
  const std::string header = bytes.substr(offset, header_len);

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  NpyArray arr;
  if (!std::regex_search(header, m, descr_re)) throw IoError("NPY header lacks descr");
  arr.descr = m[1];
  if (!std::regex_search(header, m, order_re)) throw IoError("NPY header lacks fortran_order");
  if (m[1] == "True") throw IoError("Fortran-ordered NPY arrays are not supported");
  if (!std::regex_search(header, m, shape_re)) throw IoError("NPY header lacks shape");
  std::stringstream dims(m[1]);
  for (std::string tok; std::getline(dims, tok, ',');) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    if (tok.empty()) continue;
    arr.shape.push_back(std::stoul(tok));
  }
  const std::size_t count = shape_size(arr.shape);
  std::size_t width;
  if (arr.descr == "<f8")
    width = 8;
  else if (arr.descr == "<f4")
    width = 4;
  else if (arr.descr == "<u2")
    width = 2;
  else
    throw IoError("unsupported NPY dtype '" + arr.descr + "'");
  const std::size_t start = offset + header_len;
  if (bytes.size() != start + count * width)
    throw IoError("NPY payload has " + std::to_string(bytes.size() - start) + " bytes, expected " +
                  std::to_string(count * width));
  arr.values.resize(count);
  const char* p = bytes.data() + start;
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 8) {
      double v;
      std::memcpy(&v, p + 8 * i, 8);
      arr.values[i] = v;
    } else if (width == 4) {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      arr.values[i] = v;
    } else {
      std::uint16_t v;
      std::memcpy(&v, p + 2 * i, 2);
      arr.values[i] = v;
    }
  }
  return arr;
}

Tensor NpyArray::to_tensor() const {
  std::vector<Real> data(values.begin(), values.end());
  return Tensor(shape.empty() ? Shape{1} : shape, std::move(data));
}

std::vector<std::uint16_t> NpyArray::to_u16() const {
  if (descr != "<u2") throw IoError("expected a <u2 array, found " + descr);
  return std::vector<std::uint16_t>(values.begin(), values.end());
}

void save_npy(const fs::path& path, const Tensor& t) { write_file_atomic(path, encode_npy(t)); }

void save_npy_u16(const fs::path& path, const Shape& shape, const std::vector<std::uint16_t>& data) {
  write_file_atomic(path, encode_npy_u16(shape, data));
}

NpyArray load_npy(const fs::path& path) {
  try {
    return decode_npy(read_file(path));
  } catch (const IoError& e) {
    const std::string what = e.what();
    if (what.find(path.string()) != std::string::npos) throw;
    throw IoError("'" + path.string() + "': " + what);
  }
}

Tensor load_netpbm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) { return IoError("'" + path.string() + "': " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw fail("malformed Netpbm header");
    return std::stoul(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw fail("not a Netpbm image");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
    throw fail(std::string("unsupported Netpbm type P") + kind);
  pos = 2;
  const std::size_t w = read_int(), h = read_int(), maxval = read_int();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw fail("invalid Netpbm dimensions");
  const bool colour = kind == '3' || kind == '6';
  const bool binary = kind == '5' || kind == '6';
  const std::size_t channels = colour ? 3 : 1;
  const std::size_t count = w * h * channels;
  std::vector<double> samples(count);
  if (binary) {
    ++pos;  // single whitespace after maxval
    const std::size_t width = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + count * width) throw fail("truncated Netpbm payload");
    for (std::size_t i = 0; i < count; ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos + i * width);
      samples[i] = width == 2 ? double((p[0] << 8) | p[1]) : double(p[0]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) samples[i] = double(read_int());
  }
  Tensor out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    out[i] = colour ? Real(0.299 * samples[3 * i] + 0.587 * samples[3 * i + 1] + 0.114 * samples[3 * i + 2])
                    : Real(samples[i]);
  }
  return out;
}

std::string encode_pgm(const Tensor& image) {
  if (image.rank() != 2) throw ConfigError("encode_pgm: expects an (H, W) image");
  std::string out = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  for (auto v : image.data())
    out += char(static_cast<unsigned char>(std::clamp(std::lround(double(v)), 0L, 255L)));
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace phaseforge::io
