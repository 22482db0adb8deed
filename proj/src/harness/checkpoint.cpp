// SPDX-License-Identifier: Apache-2.0
#include "gsc/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace gsc::harness {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    if (shape_numel(e.shape) != e.values.size()) {
      throw CheckpointError("checkpoint entry '" + e.name + "' has " + std::to_string(e.values.size()) +
                            " values for shape " + to_string(e.shape));
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, offset);
    offset += e.values.size() * sizeof(double);
  }
  put<std::uint64_t>(out, offset);
  for (const auto& e : entries) {
    out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(double));
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  const std::string magic = r.str(sizeof(kCheckpointMagic) - 1, "magic");
  if (magic != kCheckpointMagic) throw CheckpointError("bad checkpoint magic at offset 0");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " at offset 7");
  }
  const auto count = r.get<std::uint32_t>("entry count");
  struct Header {
    std::string name;
    Shape shape;
    std::uint64_t offset;
    std::size_t at;
  };
  std::vector<Header> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h;
    h.at = r.pos();
    const auto len = r.get<std::uint32_t>("name length");
    h.name = r.str(len, "entry name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != 0) throw CheckpointError("unsupported dtype " + std::to_string(dtype) + " at offset " + std::to_string(r.pos() - 1));
    const auto ndim = r.get<std::uint32_t>("ndim");
    if (ndim > 16) throw CheckpointError("implausible rank " + std::to_string(ndim) + " at offset " + std::to_string(r.pos() - 4));
    for (std::uint32_t d = 0; d < ndim; ++d) h.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
    h.offset = r.get<std::uint64_t>("payload offset");
    headers.push_back(std::move(h));
  }
  const std::size_t payload_at = r.pos() + sizeof(std::uint64_t);
  const auto payload = r.get<std::uint64_t>("payload size");
  if (r.remaining() < payload) {
    throw CheckpointError("checkpoint truncated: payload at offset " + std::to_string(payload_at) + " declares " +
                          std::to_string(payload) + " bytes, " + std::to_string(r.remaining()) + " present");
  }
  if (r.remaining() > payload) {
    throw CheckpointError(std::to_string(r.remaining() - payload) + " trailing bytes after payload ending at offset " +
                          std::to_string(payload_at + payload));
  }
  std::vector<CheckpointEntry> out;
  std::uint64_t expected = 0;
  for (const auto& h : headers) {
    const std::uint64_t n = shape_numel(h.shape) * sizeof(double);
    if (h.offset != expected || h.offset + n > payload) {
      throw CheckpointError("entry '" + h.name + "' (header at offset " + std::to_string(h.at) +
                            ") has overlapping or out-of-range payload offset " + std::to_string(h.offset));
    }
    expected += n;
    CheckpointEntry e{h.name, h.shape, std::vector<double>(shape_numel(h.shape))};
    std::memcpy(e.values.data(), bytes.data() + payload_at + h.offset, n);
    out.push_back(std::move(e));
  }
  if (expected != payload) {
    throw CheckpointError("payload size " + std::to_string(payload) + " at offset " + std::to_string(payload_at - 8) +
                          " does not match entries (" + std::to_string(expected) + " bytes)");
  }
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  const std::string bytes = encode_checkpoint(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write to '" + path + "' failed");
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

std::vector<CheckpointEntry> to_entries(const nn::ParamRefs& params) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : params) out.push_back({p.name, p.tensor->shape(), p.tensor->to_vector()});
  return out;
}

void assign_entries(const std::vector<CheckpointEntry>& entries, const nn::ParamRefs& params) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint has no entry '" + p.name + "'");
    if (it->second->shape != p.tensor->shape()) {
      throw CheckpointError("entry '" + p.name + "' has shape " + to_string(it->second->shape) + ", model expects " +
                            to_string(p.tensor->shape()));
    }
    const bool rg = p.tensor->requires_grad();
    *p.tensor = Tensor(it->second->shape, it->second->values, rg);
  }
}

void save_params(const std::string& path, const nn::ParamRefs& params) { save_checkpoint(path, to_entries(params)); }

void load_params(const std::string& path, const nn::ParamRefs& params) { assign_entries(load_checkpoint(path), params); }

}  // namespace gsc::harness
