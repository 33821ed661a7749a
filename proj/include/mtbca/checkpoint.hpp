#pragma once

// Checkpoint container.
//
//   offset 0   8 bytes   magic "MTBCACKP"
//          8   u32       format version (1)
//         12   u32       header length H in bytes
//         16   H bytes   UTF-8 header, one record per line:
//                          model.<key>=<value>      ModelConfig fields
//                          dsp=<canonical>          DSP config that fed the model (may be empty)
//                          class=<name>             one per class, in index order
//                          payload <n>              total float count
//                          tensor <name> <offset> <count> <d0>x<d1>...
//                          buffer <name> <offset> <count>
//                          end
//       16+H   4n bytes  float32 little-endian payload; offsets count floats
//    16+H+4n   u64       FNV-1a 64 of the payload bytes
//
// All integers are little-endian. Tensors cover every learnable plus a frozen
// omega; buffers hold BatchNorm running statistics.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtbca/binary_io.hpp"
#include "mtbca/model.hpp"

namespace mtbca {

inline constexpr char kCheckpointMagic[9] = "MTBCACKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  std::vector<std::string> class_names;
  std::string dsp;
};

inline Bytes encode_checkpoint(Checkpoint& ck) {
  std::ostringstream hdr;
  for (const auto& [k, v] : ck.config.to_kv()) hdr << "model." << k << '=' << v << '\n';
  hdr << "dsp=" << ck.dsp << '\n';
  for (const auto& c : ck.class_names) {
    if (c.find('\n') != std::string::npos) throw ConfigError("checkpoint: class name contains a newline");
    hdr << "class=" << c << '\n';
  }
  std::vector<float> payload;
  std::ostringstream table;
  for (auto& nt : ck.params.named_tensors()) {
    const auto d = nt.tensor->data();
    table << "tensor " << nt.name << ' ' << payload.size() << ' ' << d.size() << ' ';
    const auto& sh = nt.tensor->shape();
    for (std::size_t i = 0; i < sh.size(); ++i) table << (i ? "x" : "") << sh[i];
    table << '\n';
    payload.insert(payload.end(), d.begin(), d.end());
  }
  for (auto& nb : ck.params.named_buffers()) {
    table << "buffer " << nb.name << ' ' << payload.size() << ' ' << nb.values->size() << '\n';
    payload.insert(payload.end(), nb.values->begin(), nb.values->end());
  }
  hdr << "payload " << payload.size() << '\n' << table.str() << "end\n";
  const std::string h = hdr.str();

  Bytes out;
  put_bytes(out, std::string_view(kCheckpointMagic, 8));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  put_bytes(out, h);
  const std::size_t start = out.size();
  for (float v : payload) put_f32(out, v);
  put_u64(out, fnv1a64(std::span<const std::uint8_t>(out).subspan(start)));
  return out;
}

namespace detail {

struct TableEntry {
  std::size_t offset = 0;
  std::size_t count = 0;
  std::string shape;
  bool buffer = false;
};

inline std::string shape_token(const Shape& s) {
  std::string r;
  for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
  return r;
}

}  // namespace detail

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw LoadError("magic", "file too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), 8) != std::string_view(kCheckpointMagic, 8)) {
    throw LoadError("magic", "not a checkpoint file");
  }
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    throw LoadError("version", "unsupported version " + std::to_string(version) + ", expected " +
                                   std::to_string(kCheckpointVersion));
  }
  const std::uint32_t hlen = get_u32(bytes.data() + 12);
  if (16 + static_cast<std::size_t>(hlen) > bytes.size()) {
    throw LoadError("header", "header length " + std::to_string(hlen) + " exceeds file size");
  }
  const std::string header(reinterpret_cast<const char*>(bytes.data() + 16), hlen);

  Checkpoint ck;
  std::map<std::string, detail::TableEntry> table;
  std::size_t payload_count = 0;
  bool have_payload = false, have_end = false;
  std::istringstream is(header);
  std::string line;
  while (std::getline(is, line)) {
    if (line == "end") {
      have_end = true;
      break;
    }
    if (line.rfind("model.", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw LoadError("header", "malformed line '" + line + "'");
      const std::string key = line.substr(6, eq - 6);
      try {
        ck.config.set(key, line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw LoadError("model." + key, e.what());
      }
    } else if (line.rfind("dsp=", 0) == 0) {
      ck.dsp = line.substr(4);
    } else if (line.rfind("class=", 0) == 0) {
      ck.class_names.push_back(line.substr(6));
    } else if (line.rfind("payload ", 0) == 0) {
      try {
        payload_count = parse_size("payload", line.substr(8));
      } catch (const ConfigError& e) {
        throw LoadError("payload", e.what());
      }
      have_payload = true;
    } else if (line.rfind("tensor ", 0) == 0 || line.rfind("buffer ", 0) == 0) {
      std::istringstream ls(line);
      std::string kind, name;
      detail::TableEntry e;
      ls >> kind >> name >> e.offset >> e.count;
      if (kind == "tensor") ls >> e.shape;
      if (!ls || name.empty()) throw LoadError("header", "malformed table line '" + line + "'");
      e.buffer = kind == "buffer";
      table[name] = e;
    } else if (!line.empty()) {
      throw LoadError("header", "unrecognized line '" + line + "'");
    }
  }
  if (!have_end) throw LoadError("header", "missing end marker");
  if (!have_payload) throw LoadError("payload", "missing payload size");
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw LoadError("model", e.what());
  }

  const std::size_t start = 16 + hlen;
  const std::size_t available = (bytes.size() - start) / 4;
  ck.params = ModelParams<float>::init(ck.config, 0);
  auto locate = [&](const std::string& name, std::size_t expected, bool buffer) -> const detail::TableEntry& {
    auto it = table.find(name);
    if (it == table.end() || it->second.buffer != buffer) throw LoadError(name, "missing from checkpoint");
    const auto& e = it->second;
    if (e.count != expected) {
      throw LoadError(name, "holds " + std::to_string(e.count) + " values, config implies " + std::to_string(expected));
    }
    if (e.offset > payload_count || e.count > payload_count - e.offset) throw LoadError(name, "range exceeds declared payload");
    if (e.offset > available || e.count > available - e.offset) {
      throw LoadError(name, "truncated payload: need " + std::to_string(e.offset + e.count) + " floats, file has " +
                                std::to_string(available));
    }
    return e;
  };
  auto read_into = [&](const detail::TableEntry& e, std::span<float> dst) {
    const std::uint8_t* p = bytes.data() + start + 4 * e.offset;
    for (std::size_t i = 0; i < e.count; ++i) dst[i] = get_f32(p + 4 * i);
  };
  for (auto& nt : ck.params.named_tensors()) {
    const auto& e = locate(nt.name, nt.tensor->size(), false);
    if (e.shape != detail::shape_token(nt.tensor->shape())) {
      throw LoadError(nt.name, "shape " + e.shape + " does not match config shape " +
                                   detail::shape_token(nt.tensor->shape()));
    }
    read_into(e, nt.tensor->mutable_data());
  }
  for (auto& nb : ck.params.named_buffers()) read_into(locate(nb.name, nb.values->size(), true), *nb.values);

  if (available < payload_count || start + 4 * payload_count + 8 > bytes.size()) {
    throw LoadError("checksum", "truncated payload: file ends before the checksum");
  }
  const auto stored = get_u64(bytes.data() + start + 4 * payload_count);
  const auto actual = fnv1a64(bytes.subspan(start, 4 * payload_count));
  if (stored != actual) throw LoadError("checksum", "payload checksum mismatch (corrupt payload)");
  if (start + 4 * payload_count + 8 != bytes.size()) throw LoadError("checksum", "trailing bytes after checksum");
  // Finite values only: a checkpoint is always written from a finite model.
  for (auto& nt : ck.params.named_tensors())
    for (float v : nt.tensor->data())
      if (!std::isfinite(v)) throw LoadError(nt.name, "non-finite value");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Bytes b;
  try {
    b = read_file(path);
  } catch (const DataError& e) {
    throw LoadError("file", e.what());
  }
  return decode_checkpoint(b);
}

}  // namespace mtbca
