#include "messfn/checkpoint.h"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>

#include <zlib.h>

namespace messfn {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'E', 'S', 'S', 'F', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename V>
  void pod(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void floats(std::span<const float> v) {
    const auto* p = reinterpret_cast<const char*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size() * sizeof(float));
  }
  void entries(const ConfigEntries& e) {
    pod(static_cast<std::uint32_t>(e.size()));
    for (const auto& [k, v] : e) {
      str(k);
      str(v);
    }
  }
  std::size_t mark() const { return buf_.size(); }
  void crc_since(std::size_t start) {
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(buf_.data() + start),
                           static_cast<uInt>(buf_.size() - start));
    pod(static_cast<std::uint32_t>(crc));
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string origin)
      : buf_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& v, std::size_t n) {
    need(n * sizeof(float));
    v.resize(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  ConfigEntries entries() {
    ConfigEntries e(pod<std::uint32_t>());
    for (auto& [k, v] : e) {
      k = str();
      v = str();
    }
    return e;
  }
  std::size_t mark() const { return pos_; }
  void check_crc(std::size_t start, const std::string& what) {
    const auto actual = crc32(0L, reinterpret_cast<const Bytef*>(buf_.data() + start),
                              static_cast<uInt>(pos_ - start));
    const auto stored = pod<std::uint32_t>();
    if (stored != static_cast<std::uint32_t>(actual)) {
      throw CheckpointError("checksum mismatch in " + what + " of '" + origin_ + "'");
    }
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw CheckpointError("truncated checkpoint '" + origin_ + "'");
  }
  std::vector<char> buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string describe_mismatch(const MessfnConfig& stored, const MessfnConfig& expected) {
  const auto a = config_entries(stored), b = config_entries(expected);
  std::string out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second != b[i].second) {
      if (!out.empty()) out += ", ";
      out += a[i].first + " " + a[i].second + " vs configured " + b[i].second;
    }
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MessfnWeights<float>& weights,
                     const ConfigEntries& train_echo, std::uint64_t epoch) {
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod(kVersion);
  const auto header = w.mark();
  w.entries(config_entries(weights.config));
  w.entries(train_echo);
  w.pod(epoch);
  w.pod(static_cast<std::uint64_t>(weights.params.size()));
  w.crc_since(header);
  for (std::size_t i = 0; i < weights.params.size(); ++i) {
    const auto& p = weights.params[i];
    const auto start = w.mark();
    w.str(weights.names[i]);
    w.pod(static_cast<std::uint32_t>(p.shape().size()));
    for (std::size_t d : p.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.pod(p.step_count);
    w.floats(p.value.data());
    w.floats(p.adam_m);
    w.floats(p.adam_v);
    w.crc_since(start);
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), path.string());
  for (char c : kMagic) {
    if (r.pod<char>() != c) throw CheckpointError("'" + path.string() + "' is not a checkpoint");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header = r.mark();
  const auto model = r.entries();
  Checkpoint ck;
  ck.train_echo = r.entries();
  ck.epoch = r.pod<std::uint64_t>();
  const auto count = r.pod<std::uint64_t>();
  r.check_crc(header, "header");

  ck.weights = MessfnWeights<float>(config_from_entries(model));
  auto& w = ck.weights;
  if (count != w.params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, config implies " +
                          std::to_string(w.params.size()));
  }
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    const auto start = r.mark();
    const auto name = r.str();
    if (name != w.names[i]) {
      throw CheckpointError("parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                            w.names[i] + "'");
    }
    Shape shape(r.pod<std::uint32_t>());
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    if (shape != w.params[i].shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_str(shape) +
                            ", expected " + shape_str(w.params[i].shape()));
    }
    auto& p = w.params[i];
    p.step_count = r.pod<std::uint64_t>();
    std::vector<float> values;
    r.floats(values, p.numel());
    std::copy(values.begin(), values.end(), p.value.mutable_data().begin());
    r.floats(p.adam_m, p.numel());
    r.floats(p.adam_v, p.numel());
    r.check_crc(start, "parameter '" + name + "'");
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes in checkpoint '" + path.string() + "'");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const MessfnConfig& expected) {
  auto ck = load_checkpoint(path);
  if (!(ck.weights.config == expected)) {
    throw CheckpointError("incompatible checkpoint '" + path.string() +
                          "': " + describe_mismatch(ck.weights.config, expected));
  }
  return ck;
}

}  // namespace messfn
