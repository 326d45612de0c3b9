#include "flexp/wire.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "flexp/error.hpp"

namespace flexp {

std::string_view to_string(Tag tag) {
  switch (tag) {
    case Tag::act_up: return "ACT_UP";
    case Tag::act_down: return "ACT_DOWN";
    case Tag::grad_up: return "GRAD_UP";
    case Tag::grad_down: return "GRAD_DOWN";
    case Tag::align_probe: return "ALIGN_PROBE";
    case Tag::align_ack: return "ALIGN_ACK";
    case Tag::param_up: return "PARAM_UP";
    case Tag::param_down: return "PARAM_DOWN";
  }
  return "?";
}

bool is_param_frame(Tag tag) { return tag == Tag::param_up || tag == Tag::param_down; }

bool is_uplink(Tag tag) {
  return tag == Tag::act_up || tag == Tag::grad_up || tag == Tag::align_probe || tag == Tag::param_up;
}

std::size_t frame_header_bytes(std::size_t ndim) { return 4 + 1 + 1 + 4 + 8 + 1 + 4 * ndim; }

namespace {

void check_element_size(std::size_t element_size) {
  if (element_size != 4 && element_size != 8) {
    throw InputError("wire element size must be 4 or 8, got " + std::to_string(element_size));
  }
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw DecodeError(std::string("truncated frame reading ") + field + ": need " + std::to_string(n) +
                            " bytes, have " + std::to_string(bytes_.size() - pos_),
                        pos_);
    }
  }

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t message_size(const Message& msg, std::size_t element_size) {
  check_element_size(element_size);
  return frame_header_bytes(msg.payload.rank()) + msg.payload.numel() * element_size;
}

std::vector<std::uint8_t> encode_message(const Message& msg, std::size_t element_size) {
  check_element_size(element_size);
  const Shape& shape = msg.payload.shape();
  if (shape.size() > 255) throw InputError("encode_message: rank above 255");
  std::vector<std::uint8_t> out;
  out.reserve(message_size(msg, element_size));
  out.insert(out.end(), std::begin(kWireMagic), std::end(kWireMagic));
  out.push_back(kWireVersion);
  out.push_back(static_cast<std::uint8_t>(msg.tag));
  put_le<std::uint32_t>(out, msg.client_id);
  put_le<std::uint64_t>(out, msg.step_id);
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) {
    if (d > UINT32_MAX) throw InputError("encode_message: dimension exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : msg.payload.data()) {
    if (element_size == 4) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Message decode_message(std::span<const std::uint8_t> bytes, std::size_t element_size) {
  check_element_size(element_size);
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kWireMagic, 4) != 0) throw DecodeError("bad magic", 0);
  r.get<std::uint32_t>("magic");
  const std::size_t version_at = r.pos();
  if (r.get<std::uint8_t>("version") != kWireVersion) throw DecodeError("unsupported version", version_at);
  const std::size_t tag_at = r.pos();
  const auto tag = r.get<std::uint8_t>("tag");
  if (tag < 1 || tag > 8) throw DecodeError("unknown tag " + std::to_string(tag), tag_at);
  Message m;
  m.tag = static_cast<Tag>(tag);
  m.client_id = r.get<std::uint32_t>("client_id");
  m.step_id = r.get<std::uint64_t>("step_id");
  const auto ndim = r.get<std::uint8_t>("ndim");
  Shape shape(ndim);
  for (auto& d : shape) {
    const std::size_t at = r.pos();
    d = r.get<std::uint32_t>("dims");
    if (d == 0) throw DecodeError("zero dimension", at);
  }
  // Saturating element count: hostile dims must not wrap around to a length
  // that happens to match.
  std::size_t n = shape.empty() ? 0 : 1;
  bool overflow = false;
  for (std::size_t d : shape) {
    if (n > SIZE_MAX / element_size / d) overflow = true;
    if (!overflow) n *= d;
  }
  if (overflow) {
    throw DecodeError("payload length mismatch: dims exceed addressable size, got " + std::to_string(r.remaining()) +
                          " bytes",
                      r.pos());
  }
  const std::size_t expected = n * element_size;
  if (r.remaining() != expected) {
    throw DecodeError("payload length mismatch: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(r.remaining()),
                      r.pos());
  }
  std::vector<double> values(n);
  for (double& v : values) {
    if (element_size == 4) {
      v = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("payload")));
    } else {
      v = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
    }
  }
  if (ndim > 0) m.payload = Tensor(std::move(shape), std::move(values));
  return m;
}

Message transmit(const Message& msg, std::size_t element_size) {
  const auto bytes = encode_message(msg, element_size);
  return decode_message(bytes, element_size);
}

Tensor flatten_tensors(std::span<const Tensor> tensors) {
  std::vector<double> flat;
  for (const Tensor& t : tensors) flat.insert(flat.end(), t.data().begin(), t.data().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

void unflatten_into(const Tensor& flat, std::span<Tensor> tensors) {
  std::size_t total = 0;
  for (const Tensor& t : tensors) total += t.numel();
  if (flat.numel() != total) {
    throw DimensionError("unflatten: axis 0 is " + std::to_string(flat.numel()) + ", expected " + std::to_string(total));
  }
  std::size_t off = 0;
  for (Tensor& t : tensors) {
    std::copy_n(flat.data().begin() + off, t.numel(), t.data().begin());
    off += t.numel();
  }
}

}  // namespace flexp
