#include "dermpolar/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "dermpolar/errors.hpp"

namespace dermpolar {

namespace {

void write_f32_le(std::ostream& out, float value) {
    const auto bits = std::bit_cast<std::uint32_t>(value);
    const char bytes[4] = {
        static_cast<char>(bits & 0xff),
        static_cast<char>((bits >> 8) & 0xff),
        static_cast<char>((bits >> 16) & 0xff),
        static_cast<char>((bits >> 24) & 0xff),
    };
    out.write(bytes, 4);
}

float read_f32_le(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) {
        throw IoError("tensor payload ends before the header-declared element count");
    }
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                               (static_cast<std::uint32_t>(bytes[1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[3]) << 24);
    return std::bit_cast<float>(bits);
}

} // namespace

void write_tensor(std::ostream& out, const std::string& name, const ValueGrid& grid) {
    std::ostringstream header;
    header << "{\"shape\":[";
    for (int axis = 0; axis < grid.rank(); ++axis) {
        if (axis > 0) {
            header << ',';
        }
        header << grid.extent(axis);
    }
    header << "],\"name\":" << nlohmann::json(name).dump() << ",\"dtype\":\"f32\"}\n";
    out << header.str();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        write_f32_le(out, static_cast<float>(grid[i]));
    }
    if (!out) {
        throw IoError("failed while writing tensor '" + name + "'");
    }
}

bool read_tensor(std::istream& in, TensorRecord& record) {
    std::string line;
    if (!std::getline(in, line)) {
        if (in.eof()) {
            return false;
        }
        throw IoError("failed while reading a tensor header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed tensor header: ") + e.what());
    }
    if (!header.is_object() || !header.contains("shape") || !header.contains("dtype")) {
        throw IoError("tensor header must carry shape and dtype");
    }
    if (header["dtype"].get<std::string>() != "f32") {
        throw IoError("unsupported tensor dtype '" + header["dtype"].get<std::string>() + "'");
    }
    std::vector<int> shape;
    for (const auto& v : header["shape"]) {
        if (!v.is_number_integer()) {
            throw IoError("tensor shape entries must be integers");
        }
        shape.push_back(v.get<int>());
    }
    record.name = header.value("name", std::string());

    ValueGrid grid;
    try {
        grid = ValueGrid(shape);
    } catch (const InvalidShape& e) {
        throw IoError(std::string("tensor header declares a bad shape: ") + e.what());
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = static_cast<double>(read_f32_le(in));
    }
    record.grid = std::move(grid);
    return true;
}

void write_tensor_file(const std::string& path, const std::vector<TensorRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    for (const auto& r : records) {
        write_tensor(out, r.name, r.grid);
    }
}

std::vector<TensorRecord> read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    std::vector<TensorRecord> records;
    TensorRecord record;
    while (read_tensor(in, record)) {
        records.push_back(std::move(record));
        record = TensorRecord{};
    }
    if (records.empty()) {
        throw IoError("'" + path + "' holds no tensor records");
    }
    return records;
}

void save_tensor(const std::string& path, const std::string& name, const ValueGrid& grid) {
    write_tensor_file(path, {{name, grid}});
}

ValueGrid load_tensor(const std::string& path) {
    return read_tensor_file(path).front().grid;
}

const TensorRecord& find_record(const std::vector<TensorRecord>& records,
                                const std::string& name) {
    for (const auto& r : records) {
        if (r.name == name) {
            return r;
        }
    }
    throw IoError("tensor record '" + name + "' not found");
}

} // namespace dermpolar
