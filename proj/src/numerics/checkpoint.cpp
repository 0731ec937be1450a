#include "adld/numerics/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

namespace adld {
namespace {

constexpr std::string_view kMagic = "ADLD1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(std::string name, Tensor t) {
  tensors.emplace_back(std::move(name), std::move(t));
}

const Tensor& Checkpoint::get(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + std::string(name) + "'");
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

Checkpoint Checkpoint::from(const ParamRefs& params, std::string trailer) {
  Checkpoint c;
  for (const auto& p : params) c.add(p.name, *p.tensor);
  c.trailer = std::move(trailer);
  return c;
}

void Checkpoint::load_into(const ParamRefs& params) const {
  for (const auto& p : params) {
    const Tensor& t = get(p.name);
    if (t.shape() != p.tensor->shape()) {
      throw FormatError("checkpoint tensor '" + p.name + "' has shape " +
                        t.shape_string() + ", expected " +
                        p.tensor->shape_string());
    }
    *p.tensor = t;
  }
}

std::string Checkpoint::encode() const {
  std::string out(kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<double>(out, v);
  }
  put<std::uint64_t>(out, trailer.size());
  out.append(trailer);
  return out;
}

Checkpoint Checkpoint::decode(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  Reader r(bytes.substr(kMagic.size()));
  Checkpoint c;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len));
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = shape_product(shape);
    if (n > bytes.size() / sizeof(double)) throw FormatError("checkpoint truncated");
    const auto payload = r.take(n * sizeof(double));
    std::vector<double> values(n);
    std::memcpy(values.data(), payload.data(), payload.size());
    c.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const auto trailer_len = r.get<std::uint64_t>();
  c.trailer = std::string(r.take(static_cast<std::size_t>(trailer_len)));
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  write_file_atomic(path, encode());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return decode(read_file(path));
}

}  // namespace adld
