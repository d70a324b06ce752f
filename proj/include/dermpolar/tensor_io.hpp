#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// One named tensor inside a .t32 file.
struct TensorRecord {
    std::string name;
    ValueGrid grid;
};

/// Appends one record to the stream: a newline-terminated JSON header
/// followed by the row-major payload as little-endian IEEE-754 binary32.
void write_tensor(std::ostream& out, const std::string& name, const ValueGrid& grid);

/// Reads the record starting at the stream position; returns false at
/// a clean end of stream and throws IoError on anything malformed.
bool read_tensor(std::istream& in, TensorRecord& record);

void write_tensor_file(const std::string& path, const std::vector<TensorRecord>& records);

std::vector<TensorRecord> read_tensor_file(const std::string& path);

/// Single-record convenience wrappers.
void save_tensor(const std::string& path, const std::string& name, const ValueGrid& grid);
ValueGrid load_tensor(const std::string& path);

/// Record with the given name; throws IoError when absent.
const TensorRecord& find_record(const std::vector<TensorRecord>& records,
                                const std::string& name);

} // namespace dermpolar
