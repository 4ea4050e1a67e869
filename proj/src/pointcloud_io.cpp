#include "psra/pointcloud_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace psra::geometry {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(static_cast<std::uint16_t>(b[0]) |
                                      (static_cast<std::uint16_t>(b[1]) << 8));
}

float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_psra(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw EngineError("cannot open for writing: " + path);
    os.write("PSRA", 4);
    put_u32(os, static_cast<std::uint32_t>(cloud.size()));
    for (double v : cloud.points.data) put_f32(os, static_cast<float>(v));
    if (cloud.label) put_u16(os, *cloud.label);
    if (!os) throw EngineError("write failed: " + path);
}

PointCloud read_psra(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw EngineError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PSRA", 4) != 0)
        throw EngineError("not a PSRA file: " + path);
    const std::uint32_t n = get_u32(is);
    if (n == 0) throw EngineError("PSRA file has zero points: " + path);
    PointCloud cloud;
    cloud.points = Array{Shape{n, 3}};
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * 3; ++i)
        cloud.points.data[i] = static_cast<double>(get_f32(is));
    if (!is) throw EngineError("truncated PSRA file: " + path);
    // optional trailing label
    is.peek();
    if (!is.eof()) {
        const std::uint16_t label = get_u16(is);
        if (!is) throw EngineError("truncated PSRA label: " + path);
        is.peek();
        if (!is.eof()) throw EngineError("trailing bytes in PSRA file: " + path);
        cloud.label = label;
    }
    return cloud;
}

PointCloud read_xyz(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw EngineError("cannot open: " + path);
    std::vector<double> vals;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x >> y >> z))
            throw EngineError("bad XYZ line in " + path + ": '" + line + "'");
        vals.push_back(x);
        vals.push_back(y);
        vals.push_back(z);
    }
    if (vals.empty()) throw EngineError("empty XYZ file: " + path);
    PointCloud cloud;
    cloud.points = Array{Shape{vals.size() / 3, 3}, std::move(vals)};
    return cloud;
}

void write_xyz(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path);
    if (!os) throw EngineError("cannot open for writing: " + path);
    os.precision(17);
    const std::size_t n = cloud.size();
    for (std::size_t i = 0; i < n; ++i)
        os << cloud.points.data[i * 3] << ' ' << cloud.points.data[i * 3 + 1] << ' '
           << cloud.points.data[i * 3 + 2] << '\n';
}

}  // namespace psra::geometry
