#include "relureduce/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "relureduce/errors.hpp"
#include "relureduce/ioutil.hpp"

namespace relureduce {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw config_error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw config_error("cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw config_error("short write on " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw config_error("cannot move " + tmp + " into place: " + ec.message());
}

namespace {

constexpr char kMagic[5] = {'R', 'R', 'D', 'K', '1'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct reader {
  const std::string& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw config_error("checkpoint: truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::string checkpoint_bytes(const ModelF& m) {
  std::string out(kMagic, sizeof kMagic);
  const std::string meta = graph_to_json(m.graph);
  put_u64(out, meta.size());
  out += meta;
  put_u32(out, static_cast<uint32_t>(m.weights.size()));
  for (const auto& [name, t] : m.weights) {  // map order: sorted by name
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.dims.size()));
    for (int d : t.dims) put_u32(out, static_cast<uint32_t>(d));
    for (float v : t.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

ModelF checkpoint_from_bytes(const std::string& bytes) {
  reader r{bytes};
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw config_error("checkpoint: bad magic (not a model snapshot)");
  const uint64_t meta_len = r.u64();
  ModelF m;
  m.graph = graph_from_json(r.str(meta_len));
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const uint32_t ndims = r.u32();
    if (ndims == 0 || ndims > 8) throw config_error("checkpoint: corrupt tensor rank");
    std::vector<int> dims(ndims);
    for (auto& d : dims) d = static_cast<int>(r.u32());
    Tensor<float> t(dims);
    for (auto& v : t.data) {
      const uint32_t bits = r.u32();
      std::memcpy(&v, &bits, 4);
    }
    m.weights.emplace(name, std::move(t));
  }
  if (r.pos != bytes.size()) throw config_error("checkpoint: trailing bytes");
  return m;
}

void save_checkpoint(const std::string& path, const ModelF& m) {
  write_file_atomic(path, checkpoint_bytes(m));
}

ModelF load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes(read_file(path));
}

}  // namespace relureduce
