#include "psra/params.hpp"

#include <cstring>
#include <fstream>

namespace psra {

void ParamStore::add(const std::string& name, Array a) {
    if (params_.count(name)) throw EngineError("duplicate parameter: " + name);
    params_.emplace(name, std::move(a));
}

const Array& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw EngineError("unknown parameter: " + name);
    return it->second;
}

Array& ParamStore::ref(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw EngineError("unknown parameter: " + name);
    return it->second;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

constexpr char kMagic[8] = {'P', 'S', 'R', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void ParamStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw EngineError("cannot open for writing: " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    for (const auto& [name, arr] : params_) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(arr.shape.size()));
        for (std::size_t d : arr.shape) put_u32(os, static_cast<std::uint32_t>(d));
        for (double v : arr.data) put_f64(os, v);
    }
    if (!os) throw EngineError("write failed: " + path);
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw EngineError("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw EngineError("not a PSRACKPT checkpoint: " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw EngineError("unsupported checkpoint version " + std::to_string(version));
    ParamStore store;
    while (true) {
        is.peek();
        if (is.eof()) break;
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = get_u32(is);
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = get_u32(is);
        Array arr{shape};
        for (double& v : arr.data) v = get_f64(is);
        if (!is) throw EngineError("truncated checkpoint: " + path);
        store.add(name, std::move(arr));
    }
    return store;
}

TracedValue ModelVars::operator()(const std::string& name) {
    const Array& value = store_->get(name);
    if (!trainable_) return TracedValue(value);
    auto it = leaves_.find(name);
    if (it != leaves_.end())
        return TracedValue(tape_->node(it->second).val, tape_, it->second);
    TracedValue leaf = tape_->leaf(value);
    leaves_.emplace(name, leaf.node);
    return leaf;
}

GradMap ModelVars::gradients(const TracedValue& loss) {
    if (!trainable_) return {};
    auto adj = tape_->gradients(loss);
    GradMap out;
    for (const auto& [name, node] : leaves_)
        out.emplace(name, adj[static_cast<std::size_t>(node)]);
    return out;
}

void grad_accumulate(GradMap& into, const GradMap& other) {
    for (const auto& [name, g] : other) {
        auto it = into.find(name);
        if (it == into.end()) {
            into.emplace(name, g);
        } else {
            if (it->second.shape != g.shape)
                throw EngineError("gradient shape mismatch for " + name);
            for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
        }
    }
}

void grad_scale(GradMap& g, double s) {
    for (auto& [name, arr] : g)
        for (double& v : arr.data) v *= s;
}

Array init_normal(Shape shape, double std, Rng& rng) {
    Array a{std::move(shape)};
    for (double& v : a.data) v = std * rng.normal();
    return a;
}

}  // namespace psra
