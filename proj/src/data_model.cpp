#include "lcm/data_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "lcm/error.hpp"

namespace lcm {
namespace {

constexpr std::uint16_t kCheckpointVersion = Checkpoint::kFormatVersion;
constexpr std::uint16_t kSegmentsVersion = 1;

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed after " + std::to_string(count_) + " bytes");
    count_ += n;
  }
  template <typename U>
  void le(U value) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
    bytes(buf, sizeof(U));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f32_array(const float* v, std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = std::bit_cast<std::uint32_t>(v[i]);
      for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>(u >> (8 * b));
    }
    bytes(buf.data(), buf.size());
  }
  std::uint64_t count() const noexcept { return count_; }

 private:
  std::ostream& out_;
  std::uint64_t count_ = 0;
};

class ByteReader {
 public:
  ByteReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(FormatError::Reason::kTruncated, what_ + ": truncated input");
    }
  }
  template <typename U>
  U le() {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  void f32_array(float* out, std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    bytes(buf.data(), buf.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
      out[i] = std::bit_cast<float>(u);
    }
  }
  void magic(const char (&expected)[5]) {
    char got[4];
    bytes(got, 4);
    if (!std::equal(got, got + 4, expected)) {
      throw FormatError(FormatError::Reason::kBadMagic,
                        what_ + ": bad magic (expected \"" + std::string(expected, 4) + "\")");
    }
  }
  void version(std::uint16_t expected) {
    const auto v = le<std::uint16_t>();
    if (v != expected) {
      throw FormatError(FormatError::Reason::kBadVersion,
                        what_ + ": unsupported version " + std::to_string(v));
    }
  }

 private:
  std::istream& in_;
  std::string what_;
};

// Guards allocation against absurd header counts before reading the payload.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

void check_finite(const float* data, std::size_t n, const std::string& what) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(data[i])) {
      throw ValidationError(what + ": non-finite sample at index " + std::to_string(i));
    }
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Montage::validate() const {
  require(!channel_names.empty(), "montage has no channels");
  std::set<std::string> seen;
  for (const auto& name : channel_names) {
    require(!name.empty(), "montage channel name is empty");
    require(name.find(',') == std::string::npos, "montage channel name contains ','");
    require(seen.insert(name).second, "duplicate montage channel name: " + name);
  }
}

std::optional<std::size_t> Montage::index_of(const std::string& name) const {
  const auto it = std::find(channel_names.begin(), channel_names.end(), name);
  if (it == channel_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - channel_names.begin());
}

Montage Montage::numbered(std::size_t n, std::string id) {
  Montage m{std::move(id), {}};
  for (std::size_t i = 0; i < n; ++i) m.channel_names.push_back("ch" + std::to_string(i));
  return m;
}

void Recording::validate() const {
  montage.validate();
  require(montage.channel_count() == samples.rows(),
          "montage has " + std::to_string(montage.channel_count()) + " channels but samples have " +
              std::to_string(samples.rows()));
  require(samples.cols() >= 1, "recording has no samples");
  require(std::isfinite(sample_rate_hz) && sample_rate_hz > 0, "sample rate must be positive");
  require(std::isfinite(scale_to_mV) && scale_to_mV > 0, "scale_to_mV must be positive");
  check_finite(samples.data(), samples.size(), "recording");
}

void SegmentBatch::validate() const {
  require(std::isfinite(sample_rate_hz) && sample_rate_hz > 0, "segment sample rate must be positive");
  for (const auto& s : segments) {
    require(s.rows() == channels() && s.cols() == length(), "segments differ in shape");
  }
  if (labels) require(labels->size() == segments.size(), "labels do not align with segments");
}

void Checkpoint::validate() const {
  for (const auto& [name, tensor] : tensors) {
    require(tensor.data.size() == Tensor<float>::element_count(tensor.shape),
            "tensor " + name + " data does not match its shape");
    const bool theta = name.starts_with("theta/");
    const bool xi = name.starts_with("xi/");
    if (!theta && !xi) continue;
    const std::string other = (theta ? "xi/" : "theta/") + name.substr(name.find('/') + 1);
    const auto it = tensors.find(other);
    require(it != tensors.end(), "tensor " + name + " has no counterpart " + other);
    require(it->second.shape == tensor.shape, "tensor " + name + " and " + other + " differ in shape");
  }
}

std::uint64_t write_recording(const Recording& rec, std::ostream& out) {
  rec.validate();
  ByteWriter w(out);
  w.bytes("LCMR", 4);
  w.le<std::uint16_t>(kRecordingVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(rec.channels()));
  w.f64(rec.sample_rate_hz);
  w.le<std::uint64_t>(rec.length());
  w.f64(rec.scale_to_mV);
  w.f32_array(rec.samples.data(), rec.samples.size());
  return w.count();
}

Recording read_recording(std::istream& in) {
  ByteReader r(in, "LCMR");
  r.magic("LCMR");
  r.version(kRecordingVersion);
  const auto channels = r.le<std::uint32_t>();
  const double rate = r.f64();
  const auto length = r.le<std::uint64_t>();
  const double scale = r.f64();
  if (channels == 0 || length == 0 || channels * length > kMaxElements) {
    throw FormatError(FormatError::Reason::kMalformed, "LCMR: implausible shape");
  }
  Recording rec;
  rec.montage = Montage::numbered(channels);
  rec.sample_rate_hz = rate;
  rec.scale_to_mV = scale;
  rec.samples = Matrix<float>(channels, length);
  r.f32_array(rec.samples.data(), rec.samples.size());
  rec.validate();
  return rec;
}

std::string format_montage_sidecar(const Montage& montage) {
  std::string out = "montage_id=" + montage.montage_id + "\nchannels=";
  for (std::size_t i = 0; i < montage.channel_names.size(); ++i) {
    if (i) out += ',';
    out += montage.channel_names[i];
  }
  out += '\n';
  return out;
}

Montage parse_montage_sidecar(const std::string& text) {
  Montage m;
  bool have_channels = false;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(FormatError::Reason::kMalformed, "montage sidecar: expected key=value: " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "montage_id") {
      m.montage_id = value;
    } else if (key == "channels") {
      have_channels = true;
      std::istringstream names(value);
      std::string name;
      while (std::getline(names, name, ',')) m.channel_names.push_back(trim(name));
    } else {
      throw FormatError(FormatError::Reason::kMalformed, "montage sidecar: unknown key " + key);
    }
  }
  if (!have_channels) throw FormatError(FormatError::Reason::kMalformed, "montage sidecar: missing channels");
  m.validate();
  return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& recording_path) {
  auto p = recording_path;
  p += ".montage";
  return p;
}

void save_recording(const Recording& rec, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_recording(rec, out);
  auto side = open_out(sidecar_path(path));
  side << format_montage_sidecar(rec.montage);
  if (!side) throw IoError("cannot write " + sidecar_path(path).string());
}

Recording load_recording(const std::filesystem::path& path) {
  auto in = open_in(path);
  Recording rec = read_recording(in);
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream s(side);
    std::stringstream buf;
    buf << s.rdbuf();
    rec.montage = parse_montage_sidecar(buf.str());
    rec.validate();
  }
  return rec;
}

std::uint64_t write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  ckpt.validate();
  ByteWriter w(out);
  w.bytes("LCMC", 4);
  w.le<std::uint16_t>(ckpt.format_version);
  w.le<std::uint64_t>(ckpt.step);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  // std::map iterates in name order.
  for (const auto& [name, tensor] : ckpt.tensors) {
    require(name.size() <= 0xffff, "tensor name too long");
    require(tensor.shape.size() <= 0xff, "tensor rank too large");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(tensor.shape.size()));
    for (auto dim : tensor.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(dim));
    w.f32_array(tensor.data.data(), tensor.data.size());
  }
  return w.count();
}

Checkpoint read_checkpoint(std::istream& in) {
  ByteReader r(in, "LCMC");
  r.magic("LCMC");
  r.version(kCheckpointVersion);
  Checkpoint ckpt;
  ckpt.step = r.le<std::uint64_t>();
  const auto count = r.le<std::uint32_t>();
  std::string previous;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name(r.le<std::uint16_t>(), '\0');
    r.bytes(name.data(), name.size());
    if (t > 0 && !(previous < name)) {
      throw FormatError(FormatError::Reason::kMalformed, "LCMC: tensors not sorted by name at " + name);
    }
    const auto rank = r.le<std::uint8_t>();
    std::vector<std::size_t> shape(rank);
    std::uint64_t elements = 1;
    for (auto& dim : shape) {
      dim = r.le<std::uint32_t>();
      elements *= dim;
      if (elements > kMaxElements) throw FormatError(FormatError::Reason::kMalformed, "LCMC: implausible shape");
    }
    Tensor<float> tensor(shape);
    r.f32_array(tensor.data.data(), tensor.data.size());
    previous = name;
    ckpt.tensors.emplace(std::move(name), std::move(tensor));
  }
  ckpt.validate();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_checkpoint(in);
}

std::uint64_t write_segments(const SegmentBatch& batch, std::ostream& out) {
  batch.validate();
  ByteWriter w(out);
  w.bytes("LCMS", 4);
  w.le<std::uint16_t>(kSegmentsVersion);
  w.le<std::uint64_t>(batch.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(batch.channels()));
  w.le<std::uint64_t>(batch.length());
  w.f64(batch.sample_rate_hz);
  w.le<std::uint8_t>(batch.labels ? 1 : 0);
  if (batch.labels) {
    for (int label : *batch.labels) w.le<std::uint32_t>(static_cast<std::uint32_t>(label));
  }
  for (const auto& s : batch.segments) w.f32_array(s.data(), s.size());
  return w.count();
}

SegmentBatch read_segments(std::istream& in) {
  ByteReader r(in, "LCMS");
  r.magic("LCMS");
  r.version(kSegmentsVersion);
  const auto count = r.le<std::uint64_t>();
  const auto channels = r.le<std::uint32_t>();
  const auto length = r.le<std::uint64_t>();
  SegmentBatch batch;
  batch.sample_rate_hz = r.f64();
  if (count * channels * length > kMaxElements) {
    throw FormatError(FormatError::Reason::kMalformed, "LCMS: implausible shape");
  }
  const auto has_labels = r.le<std::uint8_t>();
  if (has_labels > 1) throw FormatError(FormatError::Reason::kMalformed, "LCMS: bad label flag");
  if (has_labels) {
    std::vector<int> labels(count);
    for (auto& l : labels) l = static_cast<int>(r.le<std::uint32_t>());
    batch.labels = std::move(labels);
  }
  batch.segments.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Matrix<float> seg(channels, length);
    r.f32_array(seg.data(), seg.size());
    check_finite(seg.data(), seg.size(), "LCMS segment " + std::to_string(i));
    batch.segments.push_back(std::move(seg));
  }
  batch.validate();
  return batch;
}

void save_segments(const SegmentBatch& batch, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_segments(batch, out);
}

SegmentBatch load_segments(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_segments(in);
}

std::string read_magic(const std::filesystem::path& path) {
  auto in = open_in(path);
  char buf[4];
  in.read(buf, 4);
  if (in.gcount() != 4) return {};
  return std::string(buf, 4);
}

}  // namespace lcm
