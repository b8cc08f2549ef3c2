#include "capsnet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace capsnet {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'S', 'N', 'E', 'T', '\0'};
constexpr std::uint8_t kVersion = 1;

template <class T>
void put(std::ostream& out, T x) {
  out.write(reinterpret_cast<const char*>(&x), sizeof x);
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T x{};
  if (!in.read(reinterpret_cast<char*>(&x), sizeof x)) throw CheckpointError(path + ": truncated checkpoint");
  return x;
}

std::string get_bytes(std::istream& in, std::size_t n, const std::string& path) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError(path + ": truncated checkpoint");
  return s;
}

std::string shape_string(const ad::Shape& s) {
  std::string out = "(";
  for (std::size_t k = 0; k < s.size(); ++k) out += (k ? "," : "") + std::to_string(s[k]);
  return out + ")";
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& config, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path + ": cannot open for writing");
  RunConfig echo = config;
  echo.model = params.config();
  const std::string cfg = run_config_json(echo);
  out.write(kMagic, sizeof kMagic);
  put<std::uint8_t>(out, kVersion);
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& ts = params.tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open checkpoint");
  if (get_bytes(in, sizeof kMagic, path) != std::string(kMagic, sizeof kMagic)) {
    throw CheckpointError(path + ": not a checkpoint file");
  }
  const auto version = get<std::uint8_t>(in, path);
  if (version != kVersion) throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = get<std::uint64_t>(in, path);
  if (cfg_len > (1u << 24)) throw CheckpointError(path + ": corrupt config length");
  Checkpoint ck;
  try {
    ck.config = parse_run_config(get_bytes(in, cfg_len, path));
    ck.params = ModelParams(ck.config.model);
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": bad stored config: " + e.what());
  }
  auto& ts = ck.params.tensors();
  const auto count = get<std::uint32_t>(in, path);
  if (count != ts.size()) {
    throw CheckpointError(path + ": " + std::to_string(count) + " tensors stored, config implies " +
                          std::to_string(ts.size()));
  }
  for (auto& t : ts) {
    const std::string name = get_bytes(in, get<std::uint16_t>(in, path), path);
    const auto rank = get<std::uint8_t>(in, path);
    ad::Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    if (name != t.name || shape != t.shape) {
      throw CheckpointError(path + ": tensor " + name + shape_string(shape) + " does not match expected " + t.name +
                            shape_string(t.shape));
    }
    if (!t.value.empty() &&
        !in.read(reinterpret_cast<char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)))) {
      throw CheckpointError(path + ": truncated checkpoint");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path + ": trailing bytes after tensors");
  return ck;
}

}  // namespace capsnet
