#include "gatewire/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "gatewire/errors.hpp"

namespace gatewire {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'N', '1'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::make_unsigned_t<T> u = static_cast<std::make_unsigned_t<T>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  const auto tensors = model.state_tensors();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_f64(out, v);
  }
  nlohmann::json spec = model.spec();
  const std::string trailer = spec.dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(trailer.size()));
  out.insert(out.end(), trailer.begin(), trailer.end());
  return out;
}

Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad magic (expected SDN1)", 0);
  const auto count = r.le<std::uint32_t>("tensor count");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.pos();
    const auto name_len = r.le<std::uint16_t>("name length");
    std::string name = r.str(name_len, "tensor name");
    const auto rank = r.le<std::uint8_t>("rank");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim = r.le<std::uint32_t>("dimension");
      if (dim == 0) throw CheckpointError("zero dimension in tensor '" + name + "'", r.pos() - 4);
      shape.push_back(dim);
      numel *= dim;
    }
    if (numel > r.remaining() / 8) r.need(numel * 8, "tensor values");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64("tensor values");
    try {
      tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    } catch (const Error& e) {
      throw CheckpointError(e.what(), at);
    }
  }
  const std::size_t trailer_at = r.pos();
  const auto trailer_len = r.le<std::uint32_t>("trailer length");
  const std::string trailer = r.str(trailer_len, "spec trailer");
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after spec trailer", r.pos());
  NetworkSpec spec;
  try {
    spec = nlohmann::json::parse(trailer).get<NetworkSpec>();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid spec trailer: ") + e.what(), trailer_at);
  }
  try {
    Model model = Model::build(spec, 0);
    model.load_state(tensors);
    return model;
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint does not match its spec: ") + e.what(), trailer_at);
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace gatewire
