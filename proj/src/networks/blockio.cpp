#include "networks/blockio.hpp"

#include <istream>
#include <ostream>
#include <stdexcept>

namespace morphsdf::ckpt {

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_block(std::ostream& os, const std::string& name, const ad::Tensor& t) {
    write_u32(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u32(os, uint32_t(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_u32(os, uint32_t(t.dim(i)));
    auto d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()), std::streamsize(d.size() * 4));
}

Block read_block(std::istream& is) {
    Block b;
    uint32_t name_len = read_u32(is);
    if (name_len > 4096) throw std::runtime_error("checkpoint: implausible block name length");
    b.name.resize(name_len);
    is.read(b.name.data(), std::streamsize(name_len));
    uint32_t ndim = read_u32(is);
    if (ndim > 8) throw std::runtime_error("checkpoint: implausible tensor rank");
    std::vector<int> shape;
    int64_t numel = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        shape.push_back(int(read_u32(is)));
        numel *= shape.back();
    }
    std::vector<float> data(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(data.data()), std::streamsize(numel * 4));
    if (!is) throw std::runtime_error("checkpoint: truncated block " + b.name);
    b.tensor = ad::Tensor(std::move(shape), std::move(data));
    return b;
}

}  // namespace morphsdf::ckpt
