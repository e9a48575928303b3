#include "peac/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "peac/errors.hpp"

namespace peac {

namespace {

constexpr char kMagic[8] = {'P', 'E', 'A', 'C', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void pod(T v) { bytes(&v, sizeof(T)); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::string origin) : buf_(buf), origin_(std::move(origin)) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) throw DataError("checkpoint " + origin_ + " is truncated");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

void write_tensors(Writer& w, const ParamSet& p) {
  for (const Matrix& v : p.values) {
    // Eigen's default storage is column-major; the layout is part of the format.
    w.bytes(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
  }
}

ParamSet read_tensors(Reader& r, const nlohmann::json& tensors) {
  ParamSet p;
  for (const auto& t : tensors) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw DataError("checkpoint tensor with negative shape");
    Matrix v(rows, cols);
    r.bytes(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
    p.names.push_back(t.at("name").get<std::string>());
    p.values.push_back(std::move(v));
  }
  return p;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["config"] = to_text(state.config);
  header["step"] = state.step;
  header["steps_per_epoch"] = state.steps_per_epoch;
  header["ema_alpha"] = state.model.ema_alpha;
  auto& tensors = header["tensors"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < state.model.student.size(); ++i) {
    tensors.push_back({{"name", state.model.student.names[i]},
                       {"rows", state.model.student.values[i].rows()},
                       {"cols", state.model.student.values[i].cols()}});
  }
  const std::string text = header.dump();

  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  write_tensors(w, state.model.student);
  write_tensors(w, state.model.teacher);
  write_tensors(w, state.velocity);
  w.pod<std::uint64_t>(fnv1a(w.data().data(), w.data().size()));

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw DataError("short write to checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  Reader r(buf, path.string());

  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path.string() + " has version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  if (buf.size() < sizeof(std::uint64_t)) throw DataError("checkpoint " + path.string() + " is truncated");
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + body, sizeof(stored));
  if (stored != fnv1a(buf.data(), body)) throw DataError("checkpoint " + path.string() + " failed its checksum");

  const auto header_len = r.pod<std::uint64_t>();
  if (header_len > body) throw DataError("checkpoint " + path.string() + " is truncated");
  std::string text(header_len, '\0');
  r.bytes(text.data(), text.size());

  TrainState s;
  try {
    const auto header = nlohmann::json::parse(text);
    s.config = parse_config(header.at("config").get<std::string>());
    s.step = header.at("step").get<std::int64_t>();
    s.steps_per_epoch = header.at("steps_per_epoch").get<std::int64_t>();
    s.model.config = s.config.encoder();
    s.model.ema_alpha = header.at("ema_alpha").get<double>();
    const auto& tensors = header.at("tensors");
    s.model.student = read_tensors(r, tensors);
    s.model.teacher = read_tensors(r, tensors);
    s.velocity = read_tensors(r, tensors);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + " has a malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + path.string() + " holds an invalid config: " + e.what());
  }
  if (r.pos() != body) throw DataError("checkpoint " + path.string() + " has trailing bytes");
  if (s.steps_per_epoch < 1 || s.step < 0) throw DataError("checkpoint " + path.string() + " has a bad step counter");

  Rng unused;
  const ParamSet reference = init_params(s.model.config, unused);
  if (!reference.same_shapes(s.model.student) || reference.names != s.model.student.names)
    throw DataError("checkpoint " + path.string() + " tensors do not match its encoder config");
  return s;
}

std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("checkpoint directory not found: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ckpt") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace peac
