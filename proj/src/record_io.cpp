#include "ctxtts/record_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctxtts/errors.hpp"

namespace ctxtts::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_record(const MatF& m) {
  std::string out;
  out.reserve(16 + 4 * m.size());
  out.append("CTXR", 4);
  put_u32(out, kRecordVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &m[i], sizeof bits);
    put_u32(out, bits);
  }
  return out;
}

MatF decode_record(const std::string& bytes, const std::string& what) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "CTXR") != 0) {
    throw IngestError(what, "not a feature record");
  }
  if (get_u32(bytes, 4) != kRecordVersion) throw IngestError(what, "unsupported record version");
  const std::size_t rows = get_u32(bytes, 8), cols = get_u32(bytes, 12);
  if (bytes.size() != 16 + 4 * rows * cols) throw IngestError(what, "payload size mismatch");
  MatF m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::uint32_t bits = get_u32(bytes, 16 + 4 * i);
    std::memcpy(&m[i], &bits, sizeof bits);
  }
  return m;
}

void write_record(const std::string& path, const MatF& m) {
  write_file_atomic(path, encode_record(m));
}

MatF read_record(const std::string& path) { return decode_record(read_file(path), path); }

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path, "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ctxtts::io
