#pragma once
// Binary feature record: one matrix per file.
//
//   offset  size  field
//   0       4     magic "CTXR"
//   4       4     format version (u32 LE, currently 1)
//   8       4     rows (u32 LE)
//   12      4     cols (u32 LE)
//   16      4*N   float32 LE payload, row-major, N = rows * cols

#include <cstdint>
#include <string>

#include "ctxtts/matrix.hpp"

namespace ctxtts::io {

inline constexpr std::uint32_t kRecordVersion = 1;

void write_record(const std::string& path, const MatF& m);
MatF read_record(const std::string& path);

// Serialize/deserialize to an in-memory byte string (same layout).
std::string encode_record(const MatF& m);
MatF decode_record(const std::string& bytes, const std::string& what);

// Writes to a sibling temporary and renames over `path`.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace ctxtts::io
