#include "replan/archive.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "replan/errors.hpp"

namespace replan {
namespace {

constexpr char kMagic[8] = {'R', 'P', 'L', 'N', 'A', 'R', 'C', '1'};

template <typename T>
void append(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t limit, std::string origin)
      : bytes_(bytes), limit_(limit), origin_(std::move(origin)) {}

  template <typename T>
  T read() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::vector<std::uint8_t> read_bytes(std::uint64_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::uint64_t n) {
    if (n > limit_ || pos_ + n > limit_)
      throw ArchiveError("archive '" + origin_ + "' is truncated or corrupted");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::size_t dtype_size(Archive::DType d) {
  switch (d) {
    case Archive::DType::kFloat32: return 4;
    case Archive::DType::kFloat64: return 8;
    case Archive::DType::kInt64: return 8;
    case Archive::DType::kBytes: return 1;
  }
  return 1;
}

torch::Dtype to_torch(Archive::DType d) {
  switch (d) {
    case Archive::DType::kFloat32: return torch::kFloat32;
    case Archive::DType::kFloat64: return torch::kFloat64;
    case Archive::DType::kInt64: return torch::kInt64;
    case Archive::DType::kBytes: return torch::kUInt8;
  }
  return torch::kUInt8;
}

}  // namespace

void Archive::put_tensor(const std::string& name, const torch::Tensor& tensor) {
  const torch::Tensor t = tensor.detach().contiguous().cpu();
  Entry e;
  switch (t.scalar_type()) {
    case torch::kFloat32: e.dtype = DType::kFloat32; break;
    case torch::kFloat64: e.dtype = DType::kFloat64; break;
    case torch::kInt64: e.dtype = DType::kInt64; break;
    case torch::kUInt8: e.dtype = DType::kBytes; break;
    default: throw ArchiveError("unsupported tensor dtype for entry '" + name + "'");
  }
  e.shape.assign(t.sizes().begin(), t.sizes().end());
  const auto* p = static_cast<const std::uint8_t*>(t.data_ptr());
  e.bytes.assign(p, p + t.numel() * t.element_size());
  entries_[name] = std::move(e);
}

torch::Tensor Archive::get_tensor(const std::string& name) const {
  const Entry& e = entry(name);
  auto t = torch::empty(e.shape, torch::TensorOptions().dtype(to_torch(e.dtype)));
  if (std::size_t(t.numel()) * dtype_size(e.dtype) != e.bytes.size())
    throw ArchiveError("entry '" + name + "' has inconsistent size");
  std::memcpy(t.data_ptr(), e.bytes.data(), e.bytes.size());
  return t;
}

void Archive::put_string(const std::string& name, const std::string& value) {
  Entry e;
  e.dtype = DType::kBytes;
  e.shape = {std::int64_t(value.size())};
  e.bytes.assign(value.begin(), value.end());
  entries_[name] = std::move(e);
}

std::string Archive::get_string(const std::string& name) const {
  const Entry& e = entry(name);
  return std::string(e.bytes.begin(), e.bytes.end());
}

void Archive::put_doubles(const std::string& name, const std::vector<double>& values) {
  Entry e;
  e.dtype = DType::kFloat64;
  e.shape = {std::int64_t(values.size())};
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  e.bytes.assign(p, p + values.size() * sizeof(double));
  entries_[name] = std::move(e);
}

std::vector<double> Archive::get_doubles(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != DType::kFloat64) throw ArchiveError("entry '" + name + "' is not float64");
  std::vector<double> out(e.bytes.size() / sizeof(double));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

void Archive::put_floats(const std::string& name, const std::vector<float>& values,
                         std::vector<std::int64_t> shape) {
  Entry e;
  e.dtype = DType::kFloat32;
  e.shape = shape.empty() ? std::vector<std::int64_t>{std::int64_t(values.size())} : shape;
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  e.bytes.assign(p, p + values.size() * sizeof(float));
  entries_[name] = std::move(e);
}

std::vector<float> Archive::get_floats(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != DType::kFloat32) throw ArchiveError("entry '" + name + "' is not float32");
  std::vector<float> out(e.bytes.size() / sizeof(float));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

void Archive::put_ints(const std::string& name, const std::vector<std::int64_t>& values) {
  Entry e;
  e.dtype = DType::kInt64;
  e.shape = {std::int64_t(values.size())};
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  e.bytes.assign(p, p + values.size() * sizeof(std::int64_t));
  entries_[name] = std::move(e);
}

std::vector<std::int64_t> Archive::get_ints(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != DType::kInt64) throw ArchiveError("entry '" + name + "' is not int64");
  std::vector<std::int64_t> out(e.bytes.size() / sizeof(std::int64_t));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::int64_t Archive::get_int(const std::string& name) const {
  const auto v = get_ints(name);
  if (v.size() != 1) throw ArchiveError("entry '" + name + "' is not a scalar");
  return v.front();
}

void Archive::put_rng(const std::string& name, const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  put_string(name, out.str());
}

void Archive::get_rng(const std::string& name, std::mt19937_64& rng) const {
  std::istringstream in(get_string(name));
  in >> rng;
  if (!in) throw ArchiveError("entry '" + name + "' is not a valid RNG state");
}

void Archive::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(true)) put_tensor(prefix + item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) put_tensor(prefix + item.key(), item.value());
}

void Archive::get_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard guard;
  auto copy_into = [&](const std::string& key, torch::Tensor& dst) {
    const std::string name = prefix + key;
    if (!contains(name)) throw ArchiveError("archive is missing entry '" + name + "'");
    torch::Tensor src = get_tensor(name);
    if (src.sizes() != dst.sizes())
      throw ArchiveError("entry '" + name + "' has shape " + std::to_string(src.numel()) +
                         " elements, module expects " + std::to_string(dst.numel()));
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& item : module.named_parameters(true)) copy_into(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) copy_into(item.key(), item.value());
}

void Archive::put_adam(const std::string& prefix, torch::optim::Adam& optimizer) {
  std::int64_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const std::string key = prefix + std::to_string(index++);
      auto it = optimizer.state().find(p.unsafeGetTensorImpl());
      if (it == optimizer.state().end()) continue;
      auto& st = static_cast<torch::optim::AdamParamState&>(*it->second);
      put_int(key + ".step", st.step());
      put_tensor(key + ".exp_avg", st.exp_avg());
      put_tensor(key + ".exp_avg_sq", st.exp_avg_sq());
      if (st.max_exp_avg_sq().defined()) put_tensor(key + ".max_exp_avg_sq", st.max_exp_avg_sq());
    }
  }
}

void Archive::get_adam(const std::string& prefix, torch::optim::Adam& optimizer) const {
  std::int64_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const std::string key = prefix + std::to_string(index++);
      if (!contains(key + ".step")) {
        optimizer.state().erase(p.unsafeGetTensorImpl());
        continue;
      }
      auto st = std::make_unique<torch::optim::AdamParamState>();
      st->step(get_int(key + ".step"));
      st->exp_avg(get_tensor(key + ".exp_avg").to(p.scalar_type()));
      st->exp_avg_sq(get_tensor(key + ".exp_avg_sq").to(p.scalar_type()));
      if (contains(key + ".max_exp_avg_sq"))
        st->max_exp_avg_sq(get_tensor(key + ".max_exp_avg_sq").to(p.scalar_type()));
      optimizer.state()[p.unsafeGetTensorImpl()] = std::move(st);
    }
  }
}

void Archive::put_generator(const std::string& name, const at::Generator& generator) {
  put_tensor(name, generator.get_state());
}

void Archive::get_generator(const std::string& name, at::Generator& generator) const {
  generator.set_state(get_tensor(name));
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const Archive::Entry& Archive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArchiveError("archive is missing entry '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> Archive::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  append<std::uint32_t>(out, kFormatVersion);
  append<std::uint32_t>(out, std::uint32_t(entries_.size()));
  for (const auto& [name, e] : entries_) {
    append<std::uint32_t>(out, std::uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    append<std::uint32_t>(out, std::uint32_t(e.shape.size()));
    for (auto d : e.shape) append<std::int64_t>(out, d);
    append<std::uint64_t>(out, std::uint64_t(e.bytes.size()));
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  const auto crc = crc32(0L, out.data(), uInt(out.size()));
  append<std::uint32_t>(out, std::uint32_t(crc));
  return out;
}

Archive Archive::deserialize(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw ArchiveError("'" + origin + "' is not a replan archive");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  if (version != kFormatVersion)
    throw VersionError("archive '" + origin + "' has format version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kFormatVersion));
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (std::uint32_t(crc32(0L, bytes.data(), uInt(body))) != stored_crc)
    throw ArchiveError("archive '" + origin + "' failed its checksum (corrupted)");

  Reader r(bytes, body, origin);
  r.read_bytes(8);
  r.read<std::uint32_t>();
  const auto count = r.read<std::uint32_t>();
  Archive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.read<std::uint32_t>();
    const auto name_bytes = r.read_bytes(name_len);
    Entry e;
    const auto dtype = r.read<std::uint8_t>();
    if (dtype > 3) throw ArchiveError("archive '" + origin + "' has an unknown dtype");
    e.dtype = static_cast<DType>(dtype);
    const auto ndim = r.read<std::uint32_t>();
    for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(r.read<std::int64_t>());
    e.bytes = r.read_bytes(r.read<std::uint64_t>());
    archive.entries_[std::string(name_bytes.begin(), name_bytes.end())] = std::move(e);
  }
  if (r.position() != body) throw ArchiveError("archive '" + origin + "' has trailing bytes");
  return archive;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

bool Archive::operator==(const Archive& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (const auto& [k, e] : entries_) {
    auto it = other.entries_.find(k);
    if (it == other.entries_.end()) return false;
    if (e.dtype != it->second.dtype || e.shape != it->second.shape || e.bytes != it->second.bytes)
      return false;
  }
  return true;
}

}  // namespace replan
