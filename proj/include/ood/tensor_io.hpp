#pragma once

#include <iosfwd>
#include <string>

#include "ood/tensor.hpp"

namespace ood {

// Binary tensor container: magic "OTNSR1", u32 rank, u32 extents, u8 dtype
// tag (0 = f32, 1 = f64), then raw row-major little-endian floats.
// Round-trips bit-exactly.

void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace ood
