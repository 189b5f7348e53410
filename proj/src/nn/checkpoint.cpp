#include "mcnn/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mcnn::nn {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out = "MCNN";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {  // std::map: ascending name order
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Shape s = t.shape();
    put_u32(out, 4);
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.storage()) put_f32(out, v);
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, "MCNN") != 0) throw CheckpointError("bad checkpoint magic");
  r.str(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("record count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 4) throw CheckpointError("record '" + name + "' has unsupported rank " + std::to_string(rank));
    int dims[4] = {1, 1, 1, 1};
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t v = r.u32("dims");
      if (v == 0 || v > (1u << 30)) throw CheckpointError("record '" + name + "' has invalid dimension");
      dims[4 - rank + d] = static_cast<int>(v);
    }
    Shape shape{dims[0], dims[1], dims[2], dims[3]};
    std::vector<float> data(shape.numel());
    for (auto& v : data) v = std::bit_cast<float>(r.u32("values"));
    if (!out.emplace(name, Tensor<float>(shape, std::move(data))).second) {
      throw CheckpointError("duplicate record '" + name + "'");
    }
  }
  if (!r.done()) throw CheckpointError("trailing bytes after last checkpoint record");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_checkpoint(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing '" + path.string() + "'");
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename T>
NamedTensors snapshot(const ParameterStore<T>& params, const std::string& prefix) {
  NamedTensors out;
  for (const Parameter<T>* p : params.all()) out.emplace(prefix + p->name(), p->value().template cast<float>());
  return out;
}

template <typename T>
void assign(ParameterStore<T>& params, const NamedTensors& tensors, const std::string& prefix, bool require_all) {
  for (Parameter<T>* p : params.all()) {
    auto it = tensors.find(prefix + p->name());
    if (it == tensors.end()) {
      if (require_all) throw CheckpointError("checkpoint lacks parameter '" + prefix + p->name() + "'");
      continue;
    }
    if (it->second.shape() != p->value().shape()) {
      throw CheckpointError("parameter '" + it->first + "' has shape " + it->second.shape().str() +
                            ", model expects " + p->value().shape().str());
    }
    for (std::size_t i = 0; i < it->second.size(); ++i) p->value()[i] = static_cast<T>(it->second[i]);
  }
}

template NamedTensors snapshot(const ParameterStore<float>&, const std::string&);
template NamedTensors snapshot(const ParameterStore<double>&, const std::string&);
template void assign(ParameterStore<float>&, const NamedTensors&, const std::string&, bool);
template void assign(ParameterStore<double>&, const NamedTensors&, const std::string&, bool);

}  // namespace mcnn::nn
