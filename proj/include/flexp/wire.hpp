#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "flexp/tensor.hpp"

namespace flexp {

/// Frame variants exchanged between a client and the server.
enum class Tag : std::uint8_t {
  act_up = 1,       // z_CL, client -> server
  act_down = 2,     // z_SL, server -> client
  grad_up = 3,      // g_PL2, client -> server
  grad_down = 4,    // g_SL plus the folded alignment gradient, server -> client
  align_probe = 5,  // z_PL1, client -> server
  align_ack = 6,    // alignment value R, server -> client
  param_up = 7,     // flattened parameters, baselines only
  param_down = 8,
};

std::string_view to_string(Tag tag);
bool is_param_frame(Tag tag);
/// True for frames travelling client -> server.
bool is_uplink(Tag tag);

struct Message {
  Tag tag = Tag::act_up;
  std::uint32_t client_id = 0;
  std::uint64_t step_id = 0;
  /// Empty tensor means a header-only frame.
  Tensor payload;

  friend bool operator==(const Message&, const Message&) = default;
};

/// Identifies a forward tape cached on the server.
struct SessionKey {
  std::uint32_t client_id = 0;
  std::uint64_t step_id = 0;
  auto operator<=>(const SessionKey&) const = default;
};

inline constexpr char kWireMagic[4] = {'F', 'P', 'S', 'F'};
inline constexpr std::uint8_t kWireVersion = 1;

/// magic(4) | version u8 | tag u8 | client_id u32 | step_id u64 | ndim u8
/// | dims u32 * ndim | payload, all little-endian. The element size is a
/// session parameter (4: payload values are cast to binary32, 8: binary64).
std::size_t frame_header_bytes(std::size_t ndim);

std::vector<std::uint8_t> encode_message(const Message& msg, std::size_t element_size = 4);
/// Throws DecodeError with the failing offset.
Message decode_message(std::span<const std::uint8_t> bytes, std::size_t element_size = 4);
/// Encoded length, computed without encoding.
std::size_t message_size(const Message& msg, std::size_t element_size = 4);

/// What the receiver sees after a frame crossed the wire: encode then decode.
Message transmit(const Message& msg, std::size_t element_size);

/// Flattens a list of tensors into one rank-1 payload and back.
Tensor flatten_tensors(std::span<const Tensor> tensors);
void unflatten_into(const Tensor& flat, std::span<Tensor> tensors);

}  // namespace flexp
