#pragma once

#include <iosfwd>
#include <string>

#include "autodiff/tensor.hpp"

// Primitives of the MSDF checkpoint container: little-endian u32 scalars and
// named float32 tensor blocks. Shared by the model checkpoint and the trainer
// state file so both round trip bit-exactly through the same code.
namespace morphsdf::ckpt {

void write_u32(std::ostream& os, uint32_t v);
uint32_t read_u32(std::istream& is);

void write_block(std::ostream& os, const std::string& name, const ad::Tensor& t);

struct Block {
    std::string name;
    ad::Tensor tensor;
};
Block read_block(std::istream& is);

}  // namespace morphsdf::ckpt
