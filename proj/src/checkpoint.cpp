#include "capstraffic/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "capstraffic/error.hpp"

namespace capstraffic {

namespace {

using nlohmann::ordered_json;

constexpr std::array<char, 8> kMagic{'C', 'A', 'P', 'S', 'T', 'R', 'F', 'C'};

class Fnv1a {
 public:
  void update(const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= static_cast<unsigned char>(data[i]);
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_uint(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= std::uint64_t(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

void put_tensor(std::string& out, const Tensor& t) {
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

ordered_json spec_json(const ModelSpec& m) {
  return {{"kind", to_string(m.kind)},
          {"conv_channels", m.conv_channels},
          {"kernel", m.kernel},
          {"primary_channels", m.primary_channels},
          {"primary_dim", m.primary_dim},
          {"traffic_dim", m.traffic_dim},
          {"routing_iterations", m.routing_iterations},
          {"seed", m.seed}};
}

ModelSpec spec_from(const ordered_json& j) {
  ModelSpec m;
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  m.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  m.kernel = j.at("kernel").get<std::size_t>();
  m.primary_channels = j.at("primary_channels").get<std::size_t>();
  m.primary_dim = j.at("primary_dim").get<std::size_t>();
  m.traffic_dim = j.at("traffic_dim").get<std::size_t>();
  m.routing_iterations = j.at("routing_iterations").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
  throw CheckpointError(path.string() + ": " + what);
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (ck.adam_first.size() != ck.adam_second.size() ||
      (!ck.adam_first.empty() && ck.adam_first.size() != ck.parameters.size())) {
    throw CheckpointError("optimizer state does not match the parameter list");
  }
  ordered_json header;
  header["format"] = "capstraffic-checkpoint";
  header["version"] = kCheckpointVersion;
  header["model"] = spec_json(ck.model);
  header["task"] = {{"name", ck.task.name},
                    {"L", ck.task.horizon},
                    {"M", ck.task.history},
                    {"N", ck.task.segments}};
  header["seed"] = ck.seed;
  header["step"] = ck.step;
  header["adam"] = {{"lr0", ck.adam.lr0},
                    {"decay", ck.adam.decay},
                    {"beta1", ck.adam.beta1},
                    {"beta2", ck.adam.beta2},
                    {"epsilon", ck.adam.epsilon}};
  // Bit patterns keep the statistics exact.
  header["stats"] = {{"min", ck.stats.min},
                     {"max", ck.stats.max},
                     {"min_bits", std::bit_cast<std::uint64_t>(ck.stats.min)},
                     {"max_bits", std::bit_cast<std::uint64_t>(ck.stats.max)}};
  ordered_json tensors = ordered_json::array();
  for (const auto& p : ck.parameters) {
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  header["parameters"] = tensors;
  header["has_moments"] = !ck.adam_first.empty();
  const std::string text = header.dump();

  std::string blob(kMagic.begin(), kMagic.end());
  put_u32(blob, kCheckpointVersion);
  put_u64(blob, text.size());
  blob += text;
  for (const auto& p : ck.parameters) put_tensor(blob, p.value);
  for (const auto& m : ck.adam_first) put_tensor(blob, m);
  for (const auto& v : ck.adam_second) put_tensor(blob, v);
  Fnv1a hash;
  hash.update(blob.data() + kMagic.size() + 12, blob.size() - kMagic.size() - 12);
  put_u64(blob, hash.value());

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t prefix = kMagic.size() + 4 + 8;
  if (blob.size() < prefix + 8) corrupt(path, "truncated file");
  if (std::memcmp(blob.data(), kMagic.data(), kMagic.size()) != 0) {
    corrupt(path, "not a checkpoint (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(get_uint(blob, kMagic.size(), 4));
  if (version != kCheckpointVersion) {
    corrupt(path, "unsupported format version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_uint(blob, kMagic.size() + 4, 8);
  if (header_len > blob.size() - prefix - 8) corrupt(path, "truncated header");

  ordered_json header;
  try {
    header = ordered_json::parse(blob.begin() + prefix, blob.begin() + prefix + header_len);
  } catch (const std::exception& e) {
    corrupt(path, std::string("unreadable header: ") + e.what());
  }

  Checkpoint ck;
  std::vector<Shape> shapes;
  bool has_moments = false;
  try {
    ck.model = spec_from(header.at("model"));
    const auto& t = header.at("task");
    ck.task = {t.at("name").get<std::string>(), t.at("L").get<std::size_t>(),
               t.at("M").get<std::size_t>(), t.at("N").get<std::size_t>()};
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.step = header.at("step").get<std::uint64_t>();
    const auto& a = header.at("adam");
    ck.adam = {a.at("lr0").get<double>(), a.at("decay").get<double>(),
               a.at("beta1").get<double>(), a.at("beta2").get<double>(),
               a.at("epsilon").get<double>()};
    const auto& s = header.at("stats");
    ck.stats.min = std::bit_cast<double>(s.at("min_bits").get<std::uint64_t>());
    ck.stats.max = std::bit_cast<double>(s.at("max_bits").get<std::uint64_t>());
    for (const auto& p : header.at("parameters")) {
      ck.parameters.push_back({p.at("name").get<std::string>(), Tensor()});
      shapes.push_back(p.at("shape").get<Shape>());
    }
    has_moments = header.at("has_moments").get<bool>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  }

  std::size_t doubles = 0;
  for (const auto& s : shapes) doubles += shape_size(s);
  const std::size_t groups = has_moments ? 3 : 1;
  const std::size_t expected = prefix + header_len + groups * doubles * 8 + 8;
  if (blob.size() != expected) {
    corrupt(path, blob.size() < expected ? "truncated payload" : "trailing bytes after payload");
  }
  Fnv1a hash;
  hash.update(blob.data() + kMagic.size() + 12, blob.size() - kMagic.size() - 12 - 8);
  if (hash.value() != get_uint(blob, blob.size() - 8, 8)) corrupt(path, "checksum mismatch");

  std::size_t pos = prefix + header_len;
  auto read_tensor = [&](const Shape& shape) {
    Tensor t(shape);
    for (double& v : t.data()) {
      v = std::bit_cast<double>(get_uint(blob, pos, 8));
      pos += 8;
    }
    return t;
  };
  try {
    for (std::size_t k = 0; k < shapes.size(); ++k) ck.parameters[k].value = read_tensor(shapes[k]);
    if (has_moments) {
      for (const auto& s : shapes) ck.adam_first.push_back(read_tensor(s));
      for (const auto& s : shapes) ck.adam_second.push_back(read_tensor(s));
    }
    // Validates names and shapes against the architecture.
    Model check(ck.model, ck.task, ck.parameters);
  } catch (const Error& e) {
    corrupt(path, e.what());
  }
  return ck;
}

void require_task(const Checkpoint& ck, const TaskSpec& task) {
  if (ck.task.horizon != task.horizon || ck.task.history != task.history ||
      ck.task.segments != task.segments) {
    throw GeometryError("checkpoint was trained for " + describe(ck.task) + ", not " +
                        describe(task));
  }
}

Model model_from(const Checkpoint& ck) { return Model(ck.model, ck.task, ck.parameters); }

}  // namespace capstraffic
