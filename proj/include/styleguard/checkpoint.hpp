#pragma once

// Binary model checkpoint:
//   "SGLAB1" | u32 format version | arch block | u32 T | T x f64 beta
//   | u64 count | count x f64 flat parameters
// All integers little-endian; the files are written atomically.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "styleguard/diffusion.hpp"
#include "styleguard/errors.hpp"

namespace sguard {

inline constexpr char kCheckpointMagic[6] = {'S', 'G', 'L', 'A', 'B', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserModel model;
  NoiseSchedule schedule;
};

namespace detail {

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <class T>
T take(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size()) throw DataError("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

/// Write `content` to `path` via a temporary sibling and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string encode_checkpoint(const DenoiserModel& m, const NoiseSchedule& sched) {
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  const DenoiserArch& a = m.arch();
  for (int v : {a.channels, a.width, a.blocks, a.cond_dim, a.vocab, a.upsample ? 1 : 0, a.max_t}) {
    detail::put<std::int32_t>(buf, v);
  }
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(sched.T));
  for (double b : sched.beta) detail::put<double>(buf, b);
  const std::vector<double> flat = m.flat();
  detail::put<std::uint64_t>(buf, flat.size());
  for (double v : flat) detail::put<double>(buf, v);
  return buf;
}

inline Checkpoint decode_checkpoint(const std::string& buf) {
  if (buf.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw DataError("not a SGLAB1 checkpoint");
  }
  std::size_t off = sizeof(kCheckpointMagic);
  const auto version = detail::take<std::uint32_t>(buf, off);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  DenoiserArch a;
  a.channels = detail::take<std::int32_t>(buf, off);
  a.width = detail::take<std::int32_t>(buf, off);
  a.blocks = detail::take<std::int32_t>(buf, off);
  a.cond_dim = detail::take<std::int32_t>(buf, off);
  a.vocab = detail::take<std::int32_t>(buf, off);
  a.upsample = detail::take<std::int32_t>(buf, off) != 0;
  a.max_t = detail::take<std::int32_t>(buf, off);
  const auto T = detail::take<std::uint32_t>(buf, off);
  std::vector<double> betas(T);
  for (double& b : betas) b = detail::take<double>(buf, off);
  Checkpoint ck;
  ck.schedule = schedule_from_betas(std::move(betas));
  ck.model = DenoiserModel::create(a, 0);
  const auto count = detail::take<std::uint64_t>(buf, off);
  if (count != ck.model.num_params()) throw DataError("checkpoint parameter count mismatch");
  std::vector<double> flat(count);
  for (double& v : flat) v = detail::take<double>(buf, off);
  if (off != buf.size()) throw DataError("trailing bytes in checkpoint");
  ck.model.set_flat(flat);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& m,
                            const NoiseSchedule& sched) {
  write_file_atomic(path, encode_checkpoint(m, sched));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace sguard
