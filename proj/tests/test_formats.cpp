#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <functional>

#include "eside/binary_io.hpp"
#include "eside/explain.hpp"
#include "eside/features.hpp"
#include "eside/kv_file.hpp"
#include "eside/model_io.hpp"
#include "test_util.hpp"

using namespace eside;

namespace {

using Bytes = std::vector<std::uint8_t>;

// Bitwise reflected CRC-32 (poly 0xEDB88320), no table.
std::uint32_t crc32_ref(std::span<const std::uint8_t> data) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t b : data) {
    crc ^= b;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(Bytes& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }

void set_u32(Bytes& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

// Replaces the trailer with a fresh CRC so only the intended defect remains.
Bytes recrc(Bytes b) {
  b.resize(b.size() - 4);
  put_u32(b, crc32_ref(b));
  return b;
}

FormatCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected FormatError";
  return FormatCode::io;
}

FeatureDataset small_dataset() {
  FeatureDataset ds;
  ds.dim = 2;
  ds.timesteps = {0, 12};
  ds.labels = {kSynthetic, kNatural};
  ds.tags = {"original", "hard"};
  ds.values = {0.5f, -1.0f, 2.0f, 0.25f, 3.0f, -4.5f, 1e-3f, 7.0f};
  return ds;
}

// ESF bytes assembled by hand from the layout.
Bytes small_dataset_bytes() {
  Bytes b{'E', 'S', 'F', '1'};
  put_u32(b, 1);
  put_u32(b, 2);
  put_u32(b, 2);
  put_u32(b, 2);
  put_u32(b, 0);
  put_u32(b, 12);
  const auto ds = small_dataset();
  for (std::size_t i = 0; i < 2; ++i) {
    b.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    b.push_back(static_cast<std::uint8_t>(ds.tags[i].size()));
    b.push_back(0);
    b.insert(b.end(), ds.tags[i].begin(), ds.tags[i].end());
    for (std::size_t j = 0; j < 4; ++j) put_f32(b, ds.values[4 * i + j]);
  }
  put_u32(b, crc32_ref(b));
  return b;
}

explain::EmbeddingTable small_table() { return {3, {1.0f, 0.0f, 0.0f, 0.5f, -0.5f, 0.25f}}; }

mlp::MlpModel<float> small_model() {
  auto m = mlp::init_mlp<float>(std::vector<int>{3, 2, 1}, 5);
  m.norm[0].gamma << 1.5f, 0.5f;
  m.norm[0].beta << 0.1f, -0.2f;
  m.norm[0].running_mean << 0.3f, 0.4f;
  m.norm[0].running_var << 2.0f, 0.5f;
  m.linear[1].bias << 0.75f;
  return m;
}

}  // namespace

TEST(Crc32, MatchesBitwiseReference) {
  const std::string check = "123456789";
  const Bytes v(check.begin(), check.end());
  EXPECT_EQ(io::crc32(v), 0xCBF43926u);
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    Bytes b(rng.below(5000));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
    EXPECT_EQ(io::crc32(b), crc32_ref(b));
  }
}

TEST(Esf, MatchesHandAssembledBytes) {
  EXPECT_EQ(encode_esf(small_dataset()), small_dataset_bytes());
  EXPECT_EQ(decode_esf(small_dataset_bytes()), small_dataset());
}

TEST(Esf, RoundTripBytesExact) {
  SynthConfig c;
  c.n_per_class = 20;
  c.dim = 5;
  c.overlap_frac = 0.3;
  const auto ds = synth_features(c);
  const auto bytes = encode_esf(ds);
  const auto back = decode_esf(bytes);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(encode_esf(back), bytes);
  const auto dir = test::scratch_dir("formats_esf");
  write_esf(ds, dir / "a.esf");
  EXPECT_EQ(io::read_file(dir / "a.esf"), bytes);
  EXPECT_EQ(read_esf(dir / "a.esf"), ds);
}

TEST(Esf, Corruption) {
  const auto good = small_dataset_bytes();
  auto flipped = good;
  flipped[30] ^= 0x40;
  EXPECT_EQ(code_of([&] { decode_esf(flipped); }), FormatCode::crc_mismatch);
  auto magic = good;
  magic[3] = '2';
  EXPECT_EQ(code_of([&] { decode_esf(recrc(magic)); }), FormatCode::bad_magic);
  auto version = good;
  set_u32(version, 4, 2);
  EXPECT_EQ(code_of([&] { decode_esf(recrc(version)); }), FormatCode::version_mismatch);
  // Stale CRC does not mask the version error.
  EXPECT_EQ(code_of([&] { decode_esf(version); }), FormatCode::version_mismatch);
}

TEST(Esf, HeaderCountMismatch) {
  auto more = small_dataset_bytes();
  set_u32(more, 8, 3);
  EXPECT_EQ(code_of([&] { decode_esf(recrc(more)); }), FormatCode::length_mismatch);
  auto fewer = small_dataset_bytes();
  set_u32(fewer, 8, 1);
  EXPECT_EQ(code_of([&] { decode_esf(recrc(fewer)); }), FormatCode::length_mismatch);
  auto huge = small_dataset_bytes();
  set_u32(huge, 8, 0xFFFFFFFFu);
  EXPECT_EQ(code_of([&] { decode_esf(recrc(huge)); }), FormatCode::length_mismatch);
  // Cut short: the last four bytes no longer form a matching trailer.
  const Bytes tiny{'E', 'S', 'F', '1', 1, 0, 0, 0};
  EXPECT_EQ(code_of([&] { decode_esf(tiny); }), FormatCode::crc_mismatch);
  const Bytes stub{'E', 'S', 'F', '1', 1, 0, 0};
  EXPECT_EQ(code_of([&] { decode_esf(stub); }), FormatCode::length_mismatch);
}

TEST(Esf, NonFiniteAndBadLabel) {
  auto nan = small_dataset_bytes();
  const std::size_t first_value = 4 + 4 * 4 + 2 * 4 + 1 + 2 + 8;
  set_u32(nan, first_value, std::bit_cast<std::uint32_t>(std::numeric_limits<float>::infinity()));
  EXPECT_EQ(code_of([&] { decode_esf(recrc(nan)); }), FormatCode::non_finite);
  auto label = small_dataset_bytes();
  label[first_value - 11] = 0;
  EXPECT_EQ(code_of([&] { decode_esf(recrc(label)); }), FormatCode::corrupt_header);
}

TEST(Ere, LayoutAndRoundTrip) {
  const auto t = small_table();
  Bytes expected{'E', 'R', 'E', '1'};
  put_u32(expected, 1);
  put_u32(expected, 2);
  put_u32(expected, 3);
  for (float v : t.values) put_f32(expected, v);
  put_u32(expected, crc32_ref(expected));
  const auto bytes = explain::encode_ere(t);
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(explain::decode_ere(bytes), t);
  EXPECT_EQ(explain::encode_ere(explain::decode_ere(bytes)), bytes);
  EXPECT_EQ(t.row(1), (explain::Embedding{0.5, -0.5, 0.25}));
}

TEST(Ere, Corruption) {
  const auto good = explain::encode_ere(small_table());
  auto flipped = good;
  flipped[18] ^= 1;
  EXPECT_EQ(code_of([&] { explain::decode_ere(flipped); }), FormatCode::crc_mismatch);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { explain::decode_ere(recrc(magic)); }), FormatCode::bad_magic);
  auto version = good;
  set_u32(version, 4, 2);
  EXPECT_EQ(code_of([&] { explain::decode_ere(recrc(version)); }), FormatCode::version_mismatch);
  auto count = good;
  set_u32(count, 8, 3);
  EXPECT_EQ(code_of([&] { explain::decode_ere(recrc(count)); }), FormatCode::length_mismatch);
  auto nan = good;
  set_u32(nan, 16, std::bit_cast<std::uint32_t>(std::nanf("")));
  EXPECT_EQ(code_of([&] { explain::decode_ere(recrc(nan)); }), FormatCode::non_finite);
  EXPECT_THROW(explain::encode_ere({2, {1.0f, 2.0f, 3.0f}}), InvalidArgument);
}

TEST(Emlp, LayoutAndRoundTrip) {
  const auto m = small_model();
  Bytes expected{'E', 'M', 'L', 'P'};
  put_u32(expected, 1);
  put_u32(expected, 2);
  for (std::uint32_t d : {3u, 2u, 1u}) put_u32(expected, d);
  for (const auto& l : m.linear) {
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) put_f32(expected, l.weight(r, c));
    for (int i = 0; i < l.bias.size(); ++i) put_f32(expected, l.bias(i));
  }
  const auto& bn = m.norm[0];
  for (const auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var})
    for (int i = 0; i < v->size(); ++i) put_f32(expected, (*v)(i));
  put_u32(expected, crc32_ref(expected));
  const auto bytes = mlp::encode_model(m);
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(mlp::decode_model(bytes), m);
  EXPECT_EQ(mlp::encode_model(mlp::decode_model(bytes)), bytes);
  const auto dir = test::scratch_dir("formats_emlp");
  mlp::save_model(m, dir / "m.emlp");
  EXPECT_EQ(mlp::load_model(dir / "m.emlp"), m);
}

TEST(Emlp, Corruption) {
  const auto good = mlp::encode_model(small_model());
  auto flipped = good;
  flipped[good.size() - 9] ^= 0x80;
  EXPECT_EQ(code_of([&] { mlp::decode_model(flipped); }), FormatCode::crc_mismatch);
  auto magic = good;
  magic[1] = 'N';
  EXPECT_EQ(code_of([&] { mlp::decode_model(recrc(magic)); }), FormatCode::bad_magic);
  auto version = good;
  set_u32(version, 4, 2);
  EXPECT_EQ(code_of([&] { mlp::decode_model(recrc(version)); }), FormatCode::version_mismatch);
  auto dims = good;
  set_u32(dims, 12, 4);
  EXPECT_EQ(code_of([&] { mlp::decode_model(recrc(dims)); }), FormatCode::length_mismatch);
  auto layers = good;
  set_u32(layers, 8, 1000);
  EXPECT_EQ(code_of([&] { mlp::decode_model(recrc(layers)); }), FormatCode::corrupt_header);
  auto nan = good;
  set_u32(nan, 24, std::bit_cast<std::uint32_t>(std::nanf("")));
  EXPECT_EQ(code_of([&] { mlp::decode_model(recrc(nan)); }), FormatCode::non_finite);
  auto negvar = good;
  set_u32(negvar, good.size() - 8, std::bit_cast<std::uint32_t>(-1.0f));
  EXPECT_EQ(code_of([&] { mlp::decode_model(recrc(negvar)); }), FormatCode::corrupt_header);
}

TEST(Emlp, DoubleModelStoresAsFloat) {
  const auto md = mlp::init_mlp<double>(std::vector<int>{4, 3, 1}, 2);
  EXPECT_EQ(mlp::decode_model(mlp::encode_model(md)), md.cast<float>());
}

TEST(KvFile, ParseAndFormat) {
  const auto kv = KvFile::parse("# header\n\n a = 1 \nb=two words\n  # note\nc = 2.5\n");
  ASSERT_EQ(kv.entries().size(), 3u);
  EXPECT_EQ(kv.get("b"), "two words");
  EXPECT_EQ(kv.get_as<int>("a"), 1);
  EXPECT_EQ(kv.get_as<double>("c"), 2.5);
  EXPECT_EQ(kv.to_string("hdr"), "# hdr\na = 1\nb = two words\nc = 2.5\n");
  EXPECT_EQ(KvFile::parse(kv.to_string()).entries(), kv.entries());
}

TEST(KvFile, Errors) {
  EXPECT_EQ(code_of([] { KvFile::parse("novalue\n"); }), FormatCode::corrupt_header);
  EXPECT_EQ(code_of([] { KvFile::parse(" = 3\n"); }), FormatCode::corrupt_header);
  EXPECT_EQ(code_of([] { KvFile::parse("a = 1\na = 2\n"); }), FormatCode::corrupt_header);
  const auto kv = KvFile::parse("a = 1x\n");
  EXPECT_EQ(code_of([&] { kv.get_as<int>("a"); }), FormatCode::corrupt_header);
  EXPECT_EQ(code_of([&] { kv.get("missing"); }), FormatCode::corrupt_header);
  EXPECT_EQ(code_of([] { KvFile::load("/nonexistent/eside.kv"); }), FormatCode::io);
}

TEST(KvFile, FormatExactRoundTrips) {
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    EXPECT_EQ(KvFile::parse_value<double>(format_exact(v), "v"), v);
  }
  EXPECT_EQ(format_exact(0.25), "0.25");
  EXPECT_EQ(format_exact(1e-4), "1e-04");
}
