#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "flexp/error.hpp"
#include "flexp/model.hpp"
#include "flexp/wire.hpp"

using namespace flexp;

namespace {

std::vector<std::uint8_t> read_file(const std::string& name) {
  std::ifstream in(std::string(FLEXP_TEST_DATA) + "/" + name, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

Message random_message(std::mt19937_64& rng, bool float_exact) {
  std::uniform_int_distribution<int> tag(1, 8), rank(0, 4), extent(1, 5);
  std::uniform_int_distribution<std::uint32_t> client;
  std::uniform_int_distribution<std::uint64_t> step;
  std::normal_distribution<double> value(0.0, 10.0);
  Message m;
  m.tag = static_cast<Tag>(tag(rng));
  m.client_id = client(rng);
  m.step_id = step(rng);
  const int r = rank(rng);
  if (r > 0) {
    Shape s(r);
    for (auto& d : s) d = static_cast<std::size_t>(extent(rng));
    m.payload = Tensor(s);
    for (double& v : m.payload.data()) {
      v = value(rng);
      if (float_exact) v = static_cast<double>(static_cast<float>(v));
    }
  }
  return m;
}

template <class Fn>
std::size_t decode_error_offset(Fn&& fn) {
  try {
    fn();
  } catch (const DecodeError& e) {
    return e.offset();
  }
  FAIL("expected DecodeError");
  return 0;
}

}  // namespace

TEST_CASE("header size follows the field layout") {
  CHECK(frame_header_bytes(0) == 19);
  CHECK(frame_header_bytes(2) == 27);
  CHECK(frame_header_bytes(3) == 31);
}

TEST_CASE("golden frame: ACT_UP [2,2] at binary32") {
  Message m{Tag::act_up, 1, 0, Tensor({2, 2}, {1, 2, 3, 4})};
  const auto golden = read_file("act_up_2x2_f32.bin");
  CHECK(golden.size() == 43);
  CHECK(encode_message(m, 4) == golden);
  CHECK(decode_message(golden, 4) == m);
  CHECK(message_size(m, 4) == 43);
}

TEST_CASE("golden frame: GRAD_DOWN [3] at binary64") {
  Message m{Tag::grad_down, 7, 258, Tensor({3}, {0.5, -1.25, 1e-3})};
  const auto golden = read_file("grad_down_3_f64.bin");
  CHECK(golden.size() == 47);
  CHECK(encode_message(m, 8) == golden);
  CHECK(decode_message(golden, 8) == m);
}

TEST_CASE("1000 random frames round-trip bit-exactly") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const Message m = random_message(rng, false);
    const auto bytes = encode_message(m, 8);
    CHECK(bytes.size() == message_size(m, 8));
    const Message back = decode_message(bytes, 8);
    CHECK(back.tag == m.tag);
    CHECK(back.client_id == m.client_id);
    CHECK(back.step_id == m.step_id);
    CHECK(bit_equal(back.payload, m.payload));
    CHECK(encode_message(back, 8) == bytes);
  }
}

TEST_CASE("binary32 round trip is exact for float-representable payloads") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Message m = random_message(rng, true);
    CHECK(decode_message(encode_message(m, 4), 4) == m);
  }
}

TEST_CASE("non-finite payloads survive the wire") {
  const double inf = std::numeric_limits<double>::infinity();
  Message m{Tag::grad_up, 3, 9, Tensor({3}, {inf, -inf, std::nan("")})};
  const Message back = decode_message(encode_message(m, 8), 8);
  CHECK(bit_equal(back.payload, m.payload));
}

TEST_CASE("header-only frames") {
  Message m{Tag::align_ack, 2, 5, Tensor()};
  const auto bytes = encode_message(m);
  CHECK(bytes.size() == 19);
  CHECK(decode_message(bytes) == m);
}

TEST_CASE("decode errors report the failing offset") {
  Message m{Tag::act_up, 1, 0, Tensor({2, 2}, {1, 2, 3, 4})};
  const auto good = encode_message(m);

  auto bad = good;
  bad[1] = 'X';
  CHECK(decode_error_offset([&] { decode_message(bad); }) == 0);

  bad = good;
  bad[4] = 2;
  CHECK(decode_error_offset([&] { decode_message(bad); }) == 4);

  bad = good;
  bad[5] = 9;
  CHECK(decode_error_offset([&] { decode_message(bad); }) == 5);
  bad[5] = 0;
  CHECK(decode_error_offset([&] { decode_message(bad); }) == 5);

  bad = good;
  std::memset(&bad[23], 0, 4);  // second dim
  CHECK(decode_error_offset([&] { decode_message(bad); }) == 23);

  // Truncated inside the fixed header.
  std::vector<std::uint8_t> shortframe(good.begin(), good.begin() + 10);
  CHECK(decode_error_offset([&] { decode_message(shortframe); }) == 10);
  CHECK(decode_error_offset([&] { decode_message(std::vector<std::uint8_t>{}); }) == 0);

  // Truncated payload: error names expected vs actual byte counts.
  std::vector<std::uint8_t> cut(good.begin(), good.end() - 3);
  try {
    decode_message(cut);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(e.offset() == 27);
    CHECK(std::string(e.what()).find("expected 16 bytes, got 13") != std::string::npos);
  }

  auto longer = good;
  longer.push_back(0);
  CHECK(decode_error_offset([&] { decode_message(longer); }) == 27);

  // Hostile dims that would overflow a naive size computation.
  Message big{Tag::act_up, 1, 0, Tensor({1, 1, 1, 1}, {0.0})};
  auto hostile = encode_message(big);
  for (int k = 0; k < 4; ++k) std::memset(&hostile[19 + 4 * k], 0xFF, 4);
  CHECK(decode_error_offset([&] { decode_message(hostile); }) == 35);

  CHECK_THROWS_AS(decode_message(good, 3), InputError);
}

TEST_CASE("activation payload size does not depend on the cut position") {
  // z_CL keeps shape [B, d] for every q, so ACT/GRAD frames are q-invariant.
  ModelConfig c;
  LayerStack s = build_model(c, 0);
  std::vector<std::size_t> sizes;
  for (double q : {0.1, 0.2, 0.5}) {
    Tensor z({8, c.hidden_dim});
    for (std::size_t i = 0; i < Partition::make(c.num_middle_blocks, q).cl_count; ++i) z = apply_block(s.middle[i], z);
    sizes.push_back(message_size(Message{Tag::act_up, 0, 0, z}));
  }
  CHECK(sizes[0] == sizes[1]);
  CHECK(sizes[1] == sizes[2]);
  CHECK(sizes[0] == 27 + 8 * 32 * 4);
}

TEST_CASE("parameter frames dwarf activation frames") {
  ModelConfig c;
  LayerStack s = build_model(c, 0);
  std::vector<Tensor> all;
  for (std::size_t i = 0; i < s.num_layers(); ++i)
    for (const Tensor& t : s.layer(i).tensors) all.push_back(t);
  const Message params{Tag::param_up, 0, 0, flatten_tensors(all)};
  const Message act{Tag::act_up, 0, 0, Tensor({8, 32})};
  CHECK(message_size(params) > 50 * message_size(act));
}

TEST_CASE("flatten and unflatten are inverse") {
  std::vector<Tensor> ts{Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), Tensor({1}, {7})};
  const Tensor flat = flatten_tensors(ts);
  CHECK(flat.shape() == Shape{7});
  std::vector<Tensor> out{Tensor({2, 3}), Tensor({1})};
  unflatten_into(flat, out);
  CHECK(out[0] == ts[0]);
  CHECK(out[1] == ts[1]);
  std::vector<Tensor> wrong{Tensor({2, 2})};
  CHECK_THROWS_AS(unflatten_into(flat, wrong), DimensionError);
}

TEST_CASE("tag helpers") {
  CHECK(is_param_frame(Tag::param_up));
  CHECK(is_param_frame(Tag::param_down));
  CHECK_FALSE(is_param_frame(Tag::act_up));
  CHECK(is_uplink(Tag::act_up));
  CHECK(is_uplink(Tag::grad_up));
  CHECK(is_uplink(Tag::align_probe));
  CHECK(is_uplink(Tag::param_up));
  CHECK_FALSE(is_uplink(Tag::act_down));
  CHECK(to_string(Tag::grad_down) == "GRAD_DOWN");
}
