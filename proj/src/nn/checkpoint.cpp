#include "gsim/nn/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "gsim/util/binio.hpp"

namespace gsim {

namespace {
constexpr char kMagic[4] = {'G', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_net(const Net<float>& net, const std::string& path) {
  std::ofstream os = open_out(path);
  write_magic(os, kMagic);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(net.specs.size()));
  Shape cur = net.in_shape;
  for (std::size_t l = 0; l < net.specs.size(); ++l) {
    const LayerSpec& s = net.specs[l];
    write_u32(os, static_cast<std::uint32_t>(s.kind));
    write_u32(os, static_cast<std::uint32_t>(cur.flat ? 0 : cur.h));
    write_u32(os, static_cast<std::uint32_t>(cur.flat ? 0 : cur.w));
    write_u32(os, static_cast<std::uint32_t>(cur.c));
    write_u32(os, static_cast<std::uint32_t>(s.kh));
    write_u32(os, static_cast<std::uint32_t>(s.kw));
    write_u32(os, static_cast<std::uint32_t>(s.sh));
    write_u32(os, static_cast<std::uint32_t>(s.sw));
    write_u32(os, static_cast<std::uint32_t>(s.units));
    write_f32(os, static_cast<float>(s.rate));
    cur = net.shapes[l];
  }
  for (const auto& p : net.params) {
    if (!p.present) continue;
    for (float v : p.w.data) write_f32(os, v);
    for (float v : p.b.data) write_f32(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Net<float> load_net(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, kMagic, path);
  const std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const std::uint32_t layers = read_u32(is);
  std::vector<LayerSpec> specs;
  Shape in_shape;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::uint32_t kind = read_u32(is);
    if (kind > static_cast<std::uint32_t>(LayerKind::softmax_ce))
      throw std::runtime_error("checkpoint: unknown layer kind in " + path);
    Shape s_in;
    s_in.h = static_cast<int>(read_u32(is));
    s_in.w = static_cast<int>(read_u32(is));
    s_in.c = static_cast<int>(read_u32(is));
    s_in.flat = s_in.h == 0;
    LayerSpec s;
    s.kind = static_cast<LayerKind>(kind);
    s.kh = static_cast<int>(read_u32(is));
    s.kw = static_cast<int>(read_u32(is));
    s.sh = static_cast<int>(read_u32(is));
    s.sw = static_cast<int>(read_u32(is));
    s.units = static_cast<int>(read_u32(is));
    s.rate = static_cast<double>(read_f32(is));
    if (l == 0) in_shape = s_in;
    specs.push_back(s);
  }
  Net<float> net(std::move(specs), in_shape, 0);
  for (auto& p : net.params) {
    if (!p.present) continue;
    for (float& v : p.w.data) v = read_f32(is);
    for (float& v : p.b.data) v = read_f32(is);
  }
  return net;
}

}  // namespace gsim
