#pragma once

#include <string>

#include "gsim/nn/net.hpp"

namespace gsim {

// Model checkpoint ("GNET"): magic, u32 version, u32 layer count, one
// fixed-width record per layer (kind, input shape, kernel/stride geometry,
// units, dropout rate), then each parameterized layer's weight and bias
// tensors as little-endian 32-bit reals, row-major. Round-trips bit-exactly.
void save_net(const Net<float>& net, const std::string& path);
Net<float> load_net(const std::string& path);

}  // namespace gsim
