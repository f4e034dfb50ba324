#include "csel/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace csel {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
 public:
  template <class T>
  void scalar(T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
  }
  void string(const std::string& s) {
    scalar<std::uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string name) : buf_(std::move(buf)), name_(std::move(name)) {}

  template <class T>
  T scalar() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
  std::string string() {
    const auto n = scalar<std::uint64_t>();
    need(n);
    std::string s(buf_.data() + pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::uint64_t n) const {
    if (n > buf_.size() - pos_) throw TruncatedCheckpointError(name_ + ": checkpoint is truncated");
  }
  std::vector<char> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

nlohmann::json parse_json(const std::string& text, const std::string& name) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(name + ": corrupt config block: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, TensorDtype dtype) {
  Writer w;
  w.raw("CSEL", 4);
  w.scalar<std::uint32_t>(kCheckpointVersion);
  w.string(to_json(ckpt.model).dump());
  w.string(ckpt.train_config.dump());
  w.scalar<std::uint64_t>(ckpt.epoch);
  w.scalar<std::uint64_t>(ckpt.epoch_losses.size());
  for (double l : ckpt.epoch_losses) w.scalar<double>(l);
  w.string(ckpt.rng_state);

  w.scalar<std::uint64_t>(ckpt.params.size());
  for (const auto& [name, tensor] : ckpt.params) {
    w.string(name);
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(dtype));
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) w.scalar<std::uint64_t>(d);
    for (double v : tensor.data()) {
      if (dtype == TensorDtype::f64)
        w.scalar<double>(v);
      else
        w.scalar<float>(static_cast<float>(v));
    }
  }

  const AdamState& a = ckpt.adam;
  w.scalar<double>(a.lr);
  w.scalar<double>(a.beta1);
  w.scalar<double>(a.beta2);
  w.scalar<double>(a.eps);
  w.scalar<std::uint64_t>(a.step);
  w.scalar<std::uint64_t>(a.m.size());
  for (const auto& [name, m] : a.m) {
    const auto it = a.v.find(name);
    if (it == a.v.end() || it->second.size() != m.size())
      throw std::invalid_argument("save_checkpoint: Adam moments for " + name + " are inconsistent");
    w.string(name);
    w.scalar<std::uint64_t>(m.size());
    for (double x : m) w.scalar<double>(x);
    for (double x : it->second) w.scalar<double>(x);
  }

  // Write to a sibling file first so an interrupted save never clobbers a
  // good checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw DataError("write failed for checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  Reader r(std::move(buf), name);

  std::string magic;
  try {
    magic = r.raw(4);
  } catch (const TruncatedCheckpointError&) {
    throw BadMagicError(name + ": not a checkpoint (file too short for magic)");
  }
  if (magic != "CSEL") throw BadMagicError(name + ": bad magic, not a checkpoint");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionMismatchError(name + ": checkpoint version " + std::to_string(version) +
                               ", this build reads version " + std::to_string(kCheckpointVersion));

  Checkpoint ckpt;
  try {
    ckpt.model = model_config_from_json(parse_json(r.string(), name));
  } catch (const ConfigError& e) {
    throw CheckpointError(name + ": " + e.what());
  }
  ckpt.train_config = parse_json(r.string(), name);
  ckpt.epoch = r.scalar<std::uint64_t>();
  const auto logged = r.scalar<std::uint64_t>();
  if (logged > r.remaining() / sizeof(double)) throw TruncatedCheckpointError(name + ": checkpoint is truncated");
  for (std::uint64_t i = 0; i < logged; ++i) ckpt.epoch_losses.push_back(r.scalar<double>());
  ckpt.rng_state = r.string();

  const auto count = r.scalar<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string pname = r.string();
    const auto dtype = r.scalar<std::uint8_t>();
    if (dtype > 1) throw CheckpointError(name + ": unknown dtype for " + pname);
    const auto rank = r.scalar<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.scalar<std::uint64_t>());
    const std::size_t width = dtype == 0 ? sizeof(double) : sizeof(float);
    std::size_t count_values = 1;
    for (std::size_t d : shape) {
      if (d != 0 && count_values > r.remaining() / d) throw TruncatedCheckpointError(name + ": checkpoint is truncated");
      count_values *= d;
    }
    if (count_values > r.remaining() / width) throw TruncatedCheckpointError(name + ": checkpoint is truncated");
    std::vector<double> values(count_values);
    for (double& v : values)
      v = dtype == 0 ? r.scalar<double>() : static_cast<double>(r.scalar<float>());
    try {
      ckpt.params.insert(std::move(pname), Tensor(shape, std::move(values)));
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(name + ": " + e.what());
    }
  }

  AdamState& a = ckpt.adam;
  a.lr = r.scalar<double>();
  a.beta1 = r.scalar<double>();
  a.beta2 = r.scalar<double>();
  a.eps = r.scalar<double>();
  a.step = r.scalar<std::uint64_t>();
  const auto moments = r.scalar<std::uint64_t>();
  for (std::uint64_t i = 0; i < moments; ++i) {
    const std::string pname = r.string();
    const auto len = r.scalar<std::uint64_t>();
    if (len > r.remaining() / (2 * sizeof(double))) throw TruncatedCheckpointError(name + ": checkpoint is truncated");
    std::vector<double> m(static_cast<std::size_t>(len)), v(static_cast<std::size_t>(len));
    for (double& x : m) x = r.scalar<double>();
    for (double& x : v) x = r.scalar<double>();
    a.m[pname] = std::move(m);
    a.v[pname] = std::move(v);
  }
  return ckpt;
}

}  // namespace csel
