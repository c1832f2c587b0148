// Copyright 2026 The zsclab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "zsc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace zsc {
namespace {

constexpr const char* kMagic = "zsc-checkpoint";

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

std::string read_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line))
    throw CorruptHeader(path.string() + ": header ended early");
  return line;
}

// Parses "key = value".
std::pair<std::string, std::string> key_value(const std::string& line,
                                              const std::filesystem::path& path) {
  const auto eq = line.find(" = ");
  if (eq == std::string::npos)
    throw CorruptHeader(path.string() + ": malformed header line '" + line + "'");
  return {line.substr(0, eq), line.substr(eq + 3)};
}

std::string expect_key(std::istream& in, const std::string& key,
                       const std::filesystem::path& path) {
  auto [k, v] = key_value(read_line(in, path), path);
  if (k != key) throw CorruptHeader(path.string() + ": expected '" + key + "', got '" + k + "'");
  return v;
}

long to_long(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CorruptHeader(path.string() + ": bad integer '" + s + "'");
  }
}

}  // namespace

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw CorruptHeader("checkpoint has no field '" + key + "'");
}

std::string serialize_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng deserialize_rng(const std::string& state) {
  Rng rng;
  std::istringstream in(state);
  in >> rng;
  if (!in) throw CorruptHeader("bad rng state");
  return rng;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.values.size() != ckpt.layout.total)
    throw ShapeMismatch("parameter count " + std::to_string(ckpt.values.size()) +
                        " != layer table total " + std::to_string(ckpt.layout.total));
  std::ostringstream header;
  header << kMagic << '\n'
         << "version = " << kCheckpointVersion << '\n'
         << "kind = " << ckpt.kind << '\n';
  for (const auto& [k, v] : ckpt.meta) header << k << " = " << v << '\n';
  header << "update = " << ckpt.update << '\n'
         << "rng = " << ckpt.rng_state << '\n'
         << "layers = " << ckpt.layout.layers.size() << '\n';
  for (const auto& l : ckpt.layout.layers)
    header << "layer " << l.name << ' ' << l.rows << ' ' << l.cols << '\n';
  header << "params = " << ckpt.values.size() << '\n' << "end\n";

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(ckpt.values.data()),
              static_cast<std::streamsize>(ckpt.values.size() * sizeof(float)));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  if (read_line(in, path) != kMagic)
    throw CorruptHeader(path.string() + ": not a checkpoint file");
  const long version = to_long(expect_key(in, "version", path), path);
  if (version != kCheckpointVersion)
    throw UnsupportedVersion(path.string() + ": version " + std::to_string(version) +
                             " (supported: " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint ckpt;
  ckpt.kind = expect_key(in, "kind", path);
  for (;;) {
    auto [k, v] = key_value(read_line(in, path), path);
    if (k == "update") {
      ckpt.update = to_long(v, path);
      break;
    }
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  ckpt.rng_state = expect_key(in, "rng", path);
  const long layers = to_long(expect_key(in, "layers", path), path);
  if (layers < 0 || layers > 100000) throw CorruptHeader(path.string() + ": bad layer count");
  for (long i = 0; i < layers; ++i) {
    std::istringstream line(read_line(in, path));
    std::string tag, name;
    int rows = -1, cols = -1;
    if (!(line >> tag >> name >> rows >> cols) || tag != "layer" || rows < 0 || cols < 0)
      throw CorruptHeader(path.string() + ": bad layer line");
    ckpt.layout.add(name, rows, cols);
  }
  const long count = to_long(expect_key(in, "params", path), path);
  if (read_line(in, path) != "end") throw CorruptHeader(path.string() + ": missing 'end'");
  if (count != ckpt.layout.total)
    throw ShapeMismatch(path.string() + ": params = " + std::to_string(count) +
                        " but layer table sums to " + std::to_string(ckpt.layout.total));
  ckpt.values.resize(count);
  in.read(reinterpret_cast<char*>(ckpt.values.data()),
          static_cast<std::streamsize>(count * static_cast<long>(sizeof(float))));
  if (in.gcount() != static_cast<std::streamsize>(count * static_cast<long>(sizeof(float))))
    throw TruncatedPayload(path.string() + ": payload has " + std::to_string(in.gcount()) +
                           " of " + std::to_string(count * 4) + " bytes");
  if (in.peek() != std::char_traits<char>::eof())
    throw CorruptHeader(path.string() + ": trailing bytes after payload");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ParamLayout& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  const auto& got = ckpt.layout.layers;
  for (std::size_t i = 0; i < std::max(got.size(), expected.layers.size()); ++i) {
    if (i >= got.size())
      throw ShapeMismatch(path.string() + ": missing layer " + expected.layers[i].name);
    if (i >= expected.layers.size())
      throw ShapeMismatch(path.string() + ": unexpected layer " + got[i].name);
    const auto& a = got[i];
    const auto& b = expected.layers[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols)
      throw ShapeMismatch(path.string() + ": layer " + b.name + " expected " +
                          std::to_string(b.rows) + "x" + std::to_string(b.cols) + ", found " +
                          a.name + " " + std::to_string(a.rows) + "x" + std::to_string(a.cols));
  }
  return ckpt;
}

Checkpoint policy_checkpoint(const PolicyParams<Real>& params, long update, const Rng& rng) {
  const auto& s = params.shape;
  Checkpoint ckpt;
  ckpt.kind = "policy";
  ckpt.meta = {{"obs_dim", std::to_string(s.obs_dim)},
               {"latent_dim", std::to_string(s.latent_dim)},
               {"hidden", std::to_string(s.hidden)},
               {"recurrent", std::to_string(s.recurrent)},
               {"num_actions", std::to_string(s.num_actions)},
               {"cores", std::to_string(s.cores)},
               {"heads", std::to_string(s.heads)}};
  ckpt.update = update;
  ckpt.rng_state = serialize_rng(rng);
  ckpt.layout = params.layout;
  ckpt.values = params.values.cast<float>();
  return ckpt;
}

PolicyParams<Real> policy_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "policy") throw CorruptHeader("expected a policy checkpoint, got " + ckpt.kind);
  const auto field = [&](const char* key) {
    return static_cast<int>(to_long(ckpt.get(key), "checkpoint"));
  };
  PolicyShape s;
  s.obs_dim = field("obs_dim");
  s.latent_dim = field("latent_dim");
  s.hidden = field("hidden");
  s.recurrent = field("recurrent");
  s.num_actions = field("num_actions");
  s.cores = field("cores");
  s.heads = field("heads");
  PolicyParams<Real> p(s);
  const auto& expected = p.layout.layers;
  const auto& got = ckpt.layout.layers;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (i >= got.size() || got[i].name != expected[i].name || got[i].rows != expected[i].rows ||
        got[i].cols != expected[i].cols)
      throw ShapeMismatch("layer " + expected[i].name + " does not match the declared shape");
  }
  if (got.size() != expected.size()) throw ShapeMismatch("extra layers in policy checkpoint");
  p.values = ckpt.values.cast<Real>();
  return p;
}

PolicyParams<Real> load_policy(const std::filesystem::path& path) {
  return policy_from_checkpoint(load_checkpoint(path));
}

Checkpoint discriminator_checkpoint(const DiscriminatorParams<Real>& params, long update,
                                    const Rng& rng) {
  const auto& s = params.shape;
  Checkpoint ckpt;
  ckpt.kind = "discriminator";
  ckpt.meta = {{"window", std::to_string(s.window)},
               {"hidden", std::to_string(s.hidden)},
               {"num_latents", std::to_string(s.num_latents)}};
  ckpt.update = update;
  ckpt.rng_state = serialize_rng(rng);
  ckpt.layout = params.layout;
  ckpt.values = params.values.cast<float>();
  return ckpt;
}

DiscriminatorParams<Real> discriminator_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "discriminator")
    throw CorruptHeader("expected a discriminator checkpoint, got " + ckpt.kind);
  const auto field = [&](const char* key) {
    return static_cast<int>(to_long(ckpt.get(key), "checkpoint"));
  };
  DiscriminatorShape s;
  s.window = field("window");
  s.hidden = field("hidden");
  s.num_latents = field("num_latents");
  DiscriminatorParams<Real> p(s);
  const auto& expected = p.layout.layers;
  const auto& got = ckpt.layout.layers;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (i >= got.size() || got[i].name != expected[i].name || got[i].rows != expected[i].rows ||
        got[i].cols != expected[i].cols)
      throw ShapeMismatch("layer " + expected[i].name + " does not match the declared shape");
  }
  if (got.size() != expected.size()) throw ShapeMismatch("extra layers in discriminator checkpoint");
  p.values = ckpt.values.cast<Real>();
  return p;
}

std::uint64_t param_hash(const Vec<float>& values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(values.size()) * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace zsc
