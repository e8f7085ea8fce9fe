#include "mcmil/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace mcmil {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'M', 'L'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  const unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("truncated checkpoint while reading " + what);
  return static_cast<uint32_t>(buf[0]) | static_cast<uint32_t>(buf[1]) << 8 |
         static_cast<uint32_t>(buf[2]) << 16 | static_cast<uint32_t>(buf[3]) << 24;
}

void write_tensor(std::ostream& out, const std::vector<double>& data) {
  std::vector<float> buf(data.size());
  for (size_t i = 0; i < data.size(); ++i) buf[i] = static_cast<float>(data[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_tensor(std::istream& in, std::vector<double>& data, const std::string& what) {
  std::vector<float> buf(data.size());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != buf.size() * sizeof(float)) {
    throw IoError("truncated checkpoint while reading " + what);
  }
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(buf[i]);
}

}  // namespace

void save_checkpoint(const std::string& path, const RegressorParams& params) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<uint32_t>(params.num_cameras()));
  write_u32(out, static_cast<uint32_t>(params.multiview() ? params.split_layers : 0));
  for (int d : params.layer_dims) write_u32(out, static_cast<uint32_t>(d));
  for (const auto& lp : params.shared) {
    write_tensor(out, lp.w.data);
    write_tensor(out, lp.b);
  }
  for (const auto& cam : params.variants) {
    for (const auto& lp : cam) {
      write_tensor(out, lp.w.data);
      write_tensor(out, lp.b);
    }
  }
  if (!out) throw IoError("short write to checkpoint: " + path);
}

RegressorParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad checkpoint magic in " + path);
  }
  const uint32_t version = read_u32(in, "version");
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const uint32_t cameras = read_u32(in, "camera count");
  const uint32_t split = read_u32(in, "split layer");

  RegressorParams p;
  p.layer_dims.resize(4);
  for (int i = 0; i < 4; ++i) {
    p.layer_dims[i] = static_cast<int>(read_u32(in, "layer dims"));
  }
  if (p.layer_dims.back() != 1) throw IoError("checkpoint output width != 1");
  p.split_layers = static_cast<int>(split);
  if (cameras > 0 && (split < 1 || split > 3)) {
    throw IoError("checkpoint split layer out of range");
  }

  for (int l = 0; l < 3; ++l) {
    LayerParams lp{Matrix(p.layer_dims[l + 1], p.layer_dims[l]),
                   Vector(p.layer_dims[l + 1], 0.0)};
    read_tensor(in, lp.w.data, "shared weights");
    read_tensor(in, lp.b, "shared bias");
    p.shared.push_back(std::move(lp));
  }
  for (uint32_t c = 0; c < cameras; ++c) {
    std::vector<LayerParams> cam;
    for (uint32_t l = 0; l < split; ++l) {
      LayerParams lp{Matrix(p.layer_dims[l + 1], p.layer_dims[l]),
                     Vector(p.layer_dims[l + 1], 0.0)};
      read_tensor(in, lp.w.data, "variant weights");
      read_tensor(in, lp.b, "variant bias");
      cam.push_back(std::move(lp));
    }
    p.variants.push_back(std::move(cam));
  }
  in.peek();
  if (!in.eof()) throw IoError("trailing bytes in checkpoint " + path);
  p.validate();
  return p;
}

}  // namespace mcmil
