#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "projiql/datasets.hpp"
#include "projiql/errors.hpp"

namespace projiql::data {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'J', 'Q', 'D', 'A', 'T', '\0'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void put_raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw TruncatedError("container ends before its declared contents");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace

const std::string& Container::get(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  throw FormatError("container has no metadata key '" + key + "'");
}

const std::vector<double>& Container::column(const std::string& name) const {
  for (const auto& [k, v] : columns)
    if (k == name) return v;
  throw FormatError("container has no column '" + name + "'");
}

void write_container(const Container& c, const std::string& path) {
  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put(kFormatVersion);
  w.put(static_cast<std::uint32_t>(c.metadata.size()));
  for (const auto& [k, v] : c.metadata) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put(static_cast<std::uint32_t>(c.columns.size()));
  for (const auto& [name, values] : c.columns) {
    w.put_string(name);
    w.put(static_cast<std::uint64_t>(values.size()));
    for (double v : values) w.put(v);
  }
  const std::uint64_t sum = fnv1a(w.bytes());
  w.put(sum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw ValidationError("failed writing " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t header = sizeof(kMagic) + sizeof(std::uint32_t);
  if (bytes.size() < header + sizeof(std::uint64_t)) throw TruncatedError(path + " is too short to be a container");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError(path + " is not a projiql container");
  Reader head(bytes, header);
  head.skip(sizeof(kMagic));
  const auto version = head.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw VersionError(path + " has format version " + std::to_string(version) + ", expected " +
                       std::to_string(kFormatVersion));

  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (to_little(stored) != fnv1a(bytes.substr(0, body))) throw ChecksumError(path + " failed its checksum");

  Reader r(bytes, body);
  r.skip(header);
  Container c;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_string();
    std::string v = r.get_string();
    c.metadata.emplace_back(std::move(k), std::move(v));
  }
  const auto n_cols = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_cols; ++i) {
    std::string name = r.get_string();
    const auto len = r.get<std::uint64_t>();
    if (len > (body - r.position()) / sizeof(double)) throw TruncatedError("column '" + name + "' is truncated");
    std::vector<double> values(len);
    for (auto& v : values) v = r.get<double>();
    c.columns.emplace_back(std::move(name), std::move(values));
  }
  if (r.position() != body) throw FormatError(path + " has trailing bytes before its checksum");
  return c;
}

void save(const OfflineDataset& d, const std::string& path) {
  d.validate();
  Container c;
  c.metadata = {
      {"type", "dataset"},
      {"env_name", d.meta.env_name},
      {"state_kind", to_string(d.meta.state_kind)},
      {"state_dim", std::to_string(d.meta.state_dim)},
      {"observation_dim", std::to_string(d.meta.observation_dim)},
      {"action_kind", to_string(d.meta.action_kind)},
      {"action_dim", std::to_string(d.meta.action_dim)},
      {"seed", std::to_string(d.meta.seed)},
      {"behavior", d.meta.behavior},
      {"reward_shift", format_double(d.meta.reward_shift)},
  };
  for (const auto& [k, v] : d.meta.extra) c.metadata.emplace_back("extra." + k, v);
  c.columns = {{"states", d.states},
               {"actions", d.actions},
               {"rewards", d.rewards},
               {"next_states", d.next_states},
               {"dones", d.dones}};
  write_container(c, path);
}

OfflineDataset load(const std::string& path) {
  const Container c = read_container(path);
  if (c.get("type") != "dataset") throw FormatError(path + " does not hold a dataset");
  OfflineDataset d;
  try {
    d.meta.env_name = c.get("env_name");
    d.meta.state_kind = column_kind_from_string(c.get("state_kind"));
    d.meta.state_dim = std::stoull(c.get("state_dim"));
    d.meta.observation_dim = std::stoull(c.get("observation_dim"));
    d.meta.action_kind = column_kind_from_string(c.get("action_kind"));
    d.meta.action_dim = std::stoull(c.get("action_dim"));
    d.meta.seed = std::stoull(c.get("seed"));
    d.meta.behavior = c.get("behavior");
    d.meta.reward_shift = std::stod(c.get("reward_shift"));
  } catch (const std::logic_error& e) {
    throw FormatError(path + " has malformed metadata: " + e.what());
  }
  for (const auto& [k, v] : c.metadata)
    if (k.rfind("extra.", 0) == 0) d.meta.extra[k.substr(6)] = v;
  d.states = c.column("states");
  d.actions = c.column("actions");
  d.rewards = c.column("rewards");
  d.next_states = c.column("next_states");
  d.dones = c.column("dones");
  d.validate();
  return d;
}

void export_csv(const OfflineDataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  const std::size_t sd = d.meta.state_dim;
  const std::size_t ad = d.meta.action_cols();
  for (std::size_t i = 0; i < sd; ++i) out << "s" << i << ",";
  for (std::size_t i = 0; i < ad; ++i) out << "a" << i << ",";
  out << "reward,";
  for (std::size_t i = 0; i < sd; ++i) out << "next_s" << i << ",";
  out << "done\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (std::size_t i = 0; i < sd; ++i) out << d.states[r * sd + i] << ",";
    for (std::size_t i = 0; i < ad; ++i) out << d.actions[r * ad + i] << ",";
    out << d.rewards[r] << ",";
    for (std::size_t i = 0; i < sd; ++i) out << d.next_states[r * sd + i] << ",";
    out << (d.dones[r] != 0.0 ? 1 : 0) << "\n";
  }
}

}  // namespace projiql::data
