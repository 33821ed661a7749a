#pragma once

// Dataset discovery (one sub-directory per class), stratified clip-level
// train/test split, manifest table and the preprocessed feature cache.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtbca/audio/pipeline.hpp"
#include "mtbca/audio/wav.hpp"
#include "mtbca/binary_io.hpp"
#include "mtbca/init.hpp"
#include "mtbca/train.hpp"

namespace mtbca {

enum class Split : std::uint8_t { Unassigned = 0, Train = 1, Test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    default: return "none";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "none") return Split::Unassigned;
  throw DataError("unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string path;
  std::string label;
  int class_index = -1;
  Split split = Split::Unassigned;
  double duration_s = 0.0;
};

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  double ratio = 0.0;
  /// Files found but not readable as audio. Not persisted.
  std::vector<SkippedFile> skipped;

  std::size_t count(int class_index, Split s) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) {
      return e.class_index == class_index && e.split == s;
    }));
  }
};

inline bool has_wav_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".wav";
}

/// One entry per readable WAV under root/<class>/. Class indices follow the
/// lexicographic order of class directory names.
inline DatasetManifest scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  std::map<std::string, std::vector<fs::path>> by_class;
  for (const auto& d : fs::directory_iterator(root)) {
    if (!d.is_directory()) continue;
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(d.path()))
      if (f.is_regular_file() && has_wav_extension(f.path())) files.push_back(f.path());
    std::sort(files.begin(), files.end());
    by_class[d.path().filename().string()] = std::move(files);
  }
  DatasetManifest m;
  for (const auto& [name, files] : by_class) {
    std::vector<ManifestEntry> ok;
    for (const auto& f : files) {
      try {
        const auto clip = audio::read_wav(f);
        ok.push_back({f.generic_string(), name, -1, Split::Unassigned, clip.duration_s()});
      } catch (const Error& e) {
        m.skipped.push_back({f.generic_string(), e.what()});
      }
    }
    if (ok.empty()) continue;
    const int idx = static_cast<int>(m.class_names.size());
    m.class_names.push_back(name);
    for (auto& e : ok) {
      e.class_index = idx;
      m.entries.push_back(std::move(e));
    }
  }
  if (m.entries.empty()) throw DataError("dataset root '" + root.string() + "' contains no readable WAV files");
  return m;
}

/// Per class: shuffle clips with a class-specific seed and put the first
/// clamp(round(ratio * n), 1, n - 1) into the training split.
inline DatasetManifest split(DatasetManifest m, double ratio = 0.8, std::uint64_t seed = 42) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must lie in (0,1)");
  m.seed = seed;
  m.ratio = ratio;
  for (std::size_t c = 0; c < m.class_names.size(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].class_index == static_cast<int>(c)) idx.push_back(i);
    const std::size_t n = idx.size();
    if (n < 2) {
      throw DataError("split: class '" + m.class_names[c] + "' has " + std::to_string(n) +
                      " clip(s), at least 2 are needed");
    }
    seeded_shuffle(idx, mix_seed(seed, c));
    const auto want = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    const std::size_t n_train = std::clamp<std::size_t>(want, 1, n - 1);
    for (std::size_t k = 0; k < n; ++k) m.entries[idx[k]].split = k < n_train ? Split::Train : Split::Test;
  }
  return m;
}

/// Tab-separated table:
///   # mtbca manifest v1
///   # seed=<n> ratio=<r>
///   path<TAB>label<TAB>class_index<TAB>split<TAB>duration_s
///   one row per entry
inline std::string manifest_to_tsv(const DatasetManifest& m) {
  std::ostringstream os;
  os << "# mtbca manifest v1\n# seed=" << m.seed << " ratio=" << format_double(m.ratio) << '\n';
  os << "path\tlabel\tclass_index\tsplit\tduration_s\n";
  for (const auto& e : m.entries) {
    if (e.path.find_first_of("\t\n") != std::string::npos || e.label.find_first_of("\t\n") != std::string::npos) {
      throw DataError("manifest: path or label contains a tab or newline: '" + e.path + "'");
    }
    os << e.path << '\t' << e.label << '\t' << e.class_index << '\t' << split_name(e.split) << '\t'
       << format_double(e.duration_s) << '\n';
  }
  return os.str();
}

inline DatasetManifest manifest_from_tsv(const std::string& text) {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::map<int, std::string> names;
  auto fail = [&](const std::string& why) {
    throw DataError("manifest line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string tok;
      while (ls >> tok) {
        if (tok.rfind("seed=", 0) == 0) m.seed = parse_size("seed", tok.substr(5));
        else if (tok.rfind("ratio=", 0) == 0) m.ratio = parse_double("ratio", tok.substr(6));
      }
      continue;
    }
    if (!header_seen) {
      if (line != "path\tlabel\tclass_index\tsplit\tduration_s") fail("unexpected column header");
      header_seen = true;
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, '\t')) cols.push_back(c);
    if (cols.size() != 5) fail("expected 5 columns, got " + std::to_string(cols.size()));
    ManifestEntry e;
    e.path = cols[0];
    e.label = cols[1];
    try {
      e.class_index = static_cast<int>(parse_size("class_index", cols[2]));
      e.split = parse_split(cols[3]);
      e.duration_s = parse_double("duration_s", cols[4]);
    } catch (const Error& err) {
      fail(err.what());
    }
    auto [it, inserted] = names.emplace(e.class_index, e.label);
    if (!inserted && it->second != e.label) fail("class index " + cols[2] + " used for two labels");
    m.entries.push_back(std::move(e));
  }
  if (!header_seen) throw DataError("manifest: missing column header");
  if (m.entries.empty()) throw DataError("manifest: no entries");
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = names.find(static_cast<int>(i));
    if (it == names.end()) throw DataError("manifest: class indices are not contiguous from 0");
    m.class_names.push_back(it->second);
  }
  if (!std::is_sorted(m.class_names.begin(), m.class_names.end()) ||
      std::adjacent_find(m.class_names.begin(), m.class_names.end()) != m.class_names.end()) {
    throw DataError("manifest: class indices do not follow sorted unique class names");
  }
  return m;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const auto s = manifest_to_tsv(m);
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto b = read_file(path);
  return manifest_from_tsv(std::string(b.begin(), b.end()));
}

struct CacheRecord {
  std::uint32_t class_index = 0;
  std::uint32_t entry_id = 0;
  std::uint32_t segment_index = 0;
  Split split = Split::Unassigned;
  audio::FeatureTensor features;
};

struct FeatureCache {
  std::string fingerprint;
  std::string dsp;
  /// Hash of the manifest table the cache was built from (may be empty).
  std::string manifest_hash;
  std::size_t t = 0;
  std::size_t f = 0;
  std::vector<std::string> class_names;
  std::vector<CacheRecord> records;

  FeatureSet subset(Split s) const {
    FeatureSet fs;
    fs.t = t;
    fs.f = f;
    for (const auto& r : records)
      if (r.split == s) fs.add(r.features, static_cast<int>(r.class_index));
    return fs;
  }

  std::size_t clip_count() const {
    std::set<std::uint32_t> ids;
    for (const auto& r : records) ids.insert(r.entry_id);
    return ids.size();
  }
};

struct CacheBuildReport {
  std::size_t clips_ok = 0;
  std::vector<SkippedFile> failures;
};

/// Preprocesses every manifest entry. Records are ordered by entry id, then
/// segment index; failed clips are reported and skipped.
inline FeatureCache build_cache(const DatasetManifest& m, const audio::DspConfig& dsp,
                                CacheBuildReport* report = nullptr) {
  dsp.validate();
  const auto fb = audio::make_filterbank(dsp);
  FeatureCache cache;
  cache.fingerprint = dsp.fingerprint();
  cache.dsp = dsp.canonical();
  cache.class_names = m.class_names;
  cache.manifest_hash = hex64(fnv1a64(manifest_to_tsv(m)));
  cache.t = dsp.frames_per_segment();
  cache.f = dsp.n_mels;
  CacheBuildReport local;
  CacheBuildReport& rep = report ? *report : local;
  for (std::size_t id = 0; id < m.entries.size(); ++id) {
    const auto& e = m.entries[id];
    try {
      const auto feats = audio::clip_to_features(audio::read_wav(e.path), dsp, fb);
      for (std::size_t s = 0; s < feats.size(); ++s) {
        if (feats[s].t != cache.t || feats[s].f != cache.f) {
          throw DimensionError("segment " + std::to_string(s) + " has unexpected shape");
        }
        cache.records.push_back({static_cast<std::uint32_t>(e.class_index), static_cast<std::uint32_t>(id),
                                 static_cast<std::uint32_t>(s), e.split, feats[s]});
      }
      ++rep.clips_ok;
    } catch (const Error& err) {
      rep.failures.push_back({e.path, err.what()});
    }
  }
  if (cache.records.empty()) throw DataError("build_cache: no feature records produced");
  return cache;
}

/// Throws DataError if any clip has segments in more than one split.
inline void check_no_leakage(const FeatureCache& c) {
  std::map<std::uint32_t, Split> seen;
  for (const auto& r : c.records) {
    auto [it, inserted] = seen.emplace(r.entry_id, r.split);
    if (!inserted && it->second != r.split) {
      throw DataError("cache: clip " + std::to_string(r.entry_id) + " has segments in both splits");
    }
  }
}

// Cache container: a text header terminated by "end\n", then fixed-size
// binary records, then a u64 FNV-1a of the record bytes.
//
//   MTBCA-CACHE 1
//   fingerprint <hex>
//   dsp <canonical DSP config>
//   manifest <hex>        optional hash of the source manifest table
//   shape <t> <f>
//   count <n>
//   class <name>          one per class, in index order
//   end
//
// record: u32 class, u32 entry id, u32 segment, u8 split, f32 mean, f32 std,
//         2*t*f f32 values (channel, time, frequency order); little-endian.
inline constexpr std::string_view kCacheMagic = "MTBCA-CACHE 1";

inline Bytes encode_cache(const FeatureCache& c) {
  std::ostringstream h;
  h << kCacheMagic << "\nfingerprint " << c.fingerprint << "\ndsp " << c.dsp << '\n';
  if (!c.manifest_hash.empty()) h << "manifest " << c.manifest_hash << '\n';
  h << "shape " << c.t << ' ' << c.f << "\ncount " << c.records.size() << '\n';
  for (const auto& n : c.class_names) h << "class " << n << '\n';
  h << "end\n";
  Bytes out;
  put_bytes(out, h.str());
  const std::size_t start = out.size();
  for (const auto& r : c.records) {
    put_u32(out, r.class_index);
    put_u32(out, r.entry_id);
    put_u32(out, r.segment_index);
    out.push_back(static_cast<std::uint8_t>(r.split));
    put_f32(out, r.features.mean);
    put_f32(out, r.features.stddev);
    for (float v : r.features.values) put_f32(out, v);
  }
  put_u64(out, fnv1a64(std::span<const std::uint8_t>(out).subspan(start)));
  return out;
}

namespace detail {

/// Parses the text header; returns the offset of the first record byte.
inline std::size_t parse_cache_header(std::span<const std::uint8_t> b, FeatureCache& c, std::size_t& count) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto* begin = b.data() + pos;
    const auto* end = static_cast<const std::uint8_t*>(std::memchr(begin, '\n', b.size() - pos));
    if (!end) throw LoadError("header", "unterminated cache header");
    std::string s(reinterpret_cast<const char*>(begin), static_cast<std::size_t>(end - begin));
    pos += s.size() + 1;
    return s;
  };
  if (next_line() != kCacheMagic) throw LoadError("magic", "not a feature cache file");
  bool have_shape = false, have_count = false;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp), val = sp == std::string::npos ? "" : line.substr(sp + 1);
    try {
      if (key == "fingerprint") c.fingerprint = val;
      else if (key == "dsp") c.dsp = val;
      else if (key == "manifest") c.manifest_hash = val;
      else if (key == "class") c.class_names.push_back(val);
      else if (key == "count") {
        count = parse_size("count", val);
        have_count = true;
      } else if (key == "shape") {
        std::istringstream ls(val);
        std::string a, bb;
        ls >> a >> bb;
        c.t = parse_size("shape", a);
        c.f = parse_size("shape", bb);
        have_shape = true;
      } else {
        throw LoadError("header", "unrecognized line '" + line + "'");
      }
    } catch (const ConfigError& e) {
      throw LoadError(key, e.what());
    }
  }
  if (!have_shape) throw LoadError("shape", "missing");
  if (!have_count) throw LoadError("count", "missing");
  return pos;
}

}  // namespace detail

inline FeatureCache decode_cache(std::span<const std::uint8_t> b) {
  FeatureCache c;
  std::size_t count = 0;
  const std::size_t start = detail::parse_cache_header(b, c, count);
  // Bound every factor by the file size first so the products cannot wrap.
  if (c.t > b.size() || c.f > b.size() || 8 * c.t * c.f > b.size() || count > b.size()) {
    throw LoadError("records", "truncated cache: header declares more data than the file holds");
  }
  const std::size_t plane = 2 * c.t * c.f;
  const std::size_t rec_bytes = 13 + 8 + 4 * plane;
  if (b.size() < start + count * rec_bytes + 8) {
    throw LoadError("records", "truncated cache: expected " + std::to_string(count) + " records of " +
                                   std::to_string(rec_bytes) + " bytes");
  }
  if (b.size() != start + count * rec_bytes + 8) throw LoadError("records", "unexpected trailing bytes");
  const auto stored = get_u64(b.data() + start + count * rec_bytes);
  if (stored != fnv1a64(b.subspan(start, count * rec_bytes))) throw LoadError("checksum", "record checksum mismatch");
  c.records.resize(count);
  const std::uint8_t* p = b.data() + start;
  for (auto& r : c.records) {
    r.class_index = get_u32(p);
    r.entry_id = get_u32(p + 4);
    r.segment_index = get_u32(p + 8);
    if (p[12] > 2) throw LoadError("split", "invalid split code " + std::to_string(p[12]));
    r.split = static_cast<Split>(p[12]);
    if (r.class_index >= c.class_names.size()) throw LoadError("class", "record class index out of range");
    r.features.t = c.t;
    r.features.f = c.f;
    r.features.mean = get_f32(p + 13);
    r.features.stddev = get_f32(p + 17);
    r.features.values.resize(plane);
    for (std::size_t i = 0; i < plane; ++i) r.features.values[i] = get_f32(p + 21 + 4 * i);
    p += rec_bytes;
  }
  return c;
}

inline void write_cache(const std::filesystem::path& path, const FeatureCache& c) { write_file(path, encode_cache(c)); }

inline FeatureCache read_cache(const std::filesystem::path& path) {
  Bytes b;
  try {
    b = read_file(path);
  } catch (const DataError& e) {
    throw LoadError("file", e.what());
  }
  return decode_cache(b);
}

/// Header fields of an existing cache file (no records), or nullopt if the
/// file is missing or unreadable.
inline std::optional<FeatureCache> read_cache_header(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  try {
    FeatureCache c;
    std::size_t count = 0;
    const auto b = read_file(path);
    detail::parse_cache_header(b, c, count);
    return c;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace mtbca
