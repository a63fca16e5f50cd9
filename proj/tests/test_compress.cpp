#include <gtest/gtest.h>

#include <bit>
#include <cstring>

#include <zlib.h>

#include "oracles.hpp"
#include "prunekit/compress.hpp"
#include "prunekit/damage.hpp"
#include "prunekit/prune.hpp"

using namespace prunekit;

namespace {

const oracle::HalfTable& half_table() {
  static const oracle::HalfTable table;
  return table;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

std::uint16_t read_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::vector<std::uint8_t> inflate_raw(const std::uint8_t* data, std::size_t size, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  EXPECT_EQ(inflateInit2(&zs, -MAX_WBITS), Z_OK);
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  EXPECT_EQ(inflate(&zs, Z_FINISH), Z_STREAM_END);
  out.resize(zs.total_out);
  inflateEnd(&zs);
  return out;
}

Index stored_scalars(const ModelSpec& spec) {
  Index n = 0, in = spec.input_dim;
  for (const auto& h : spec.hidden) {
    n += static_cast<Index>(h.width) * (in + 1) + (h.has_batchnorm ? 4 * h.width : 0);
    in = h.width;
  }
  return n + in + 1;
}

}  // namespace

TEST(Half, DecodeMatchesFormatDefinitionForEveryPattern) {
  for (std::uint32_t h = 0; h < 65536; ++h) {
    const double want = oracle::half_value(static_cast<std::uint16_t>(h));
    const float got = half_to_float(static_cast<std::uint16_t>(h));
    if (std::isnan(want)) EXPECT_TRUE(std::isnan(got)) << h;
    else EXPECT_EQ(static_cast<double>(got), want) << h;
  }
}

TEST(Half, EncodeMatchesExhaustiveNearestSearch) {
  // Every 257th float bit pattern plus all patterns in the subnormal and
  // overflow neighbourhoods of binary16.
  auto check = [&](std::uint32_t bits) {
    const float f = std::bit_cast<float>(bits);
    if (std::isnan(f)) {
      EXPECT_TRUE(std::isnan(half_to_float(float_to_half(f))));
      return;
    }
    ASSERT_EQ(float_to_half(f), half_table().nearest(f)) << std::hexfloat << f;
  };
  for (std::uint64_t b = 0; b <= 0xffffffffULL; b += 257) check(static_cast<std::uint32_t>(b));
  for (float lo : {5.0e-8f, 65000.0f}) {
    const std::uint32_t start = std::bit_cast<std::uint32_t>(lo);
    for (std::uint32_t k = 0; k < 200000; ++k) {
      check(start + k);
      check((start + k) | 0x80000000u);
    }
  }
}

TEST(Half, TiesGoToEven) {
  // 1 + 2^-11 sits halfway between 1 and the next binary16 value.
  EXPECT_EQ(float_to_half(1.0f + std::ldexp(1.0f, -11)), 0x3c00);
  EXPECT_EQ(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11)), 0x3c02);
  EXPECT_EQ(float_to_half(65504.0f), 0x7bff);
  EXPECT_EQ(float_to_half(65519.0f), 0x7bff);
  EXPECT_EQ(float_to_half(65520.0f), 0x7c00);
  EXPECT_EQ(float_to_half(-1e9f), 0xfc00);
}

TEST(Serialize, HeaderSizeFormula) {
  for (std::size_t layers : {1u, 2u, 6u}) EXPECT_EQ(serialized_header_size(layers), 20 + 20 * layers);
}

TEST(Serialize, F32RoundTripIsExact) {
  auto m = oracle::random_model<float>(oracle::small_spec(7, {9, 5}, Activation::elu, true), 3);
  MaskMatrix mask = MaskMatrix::Ones(9, 8);
  mask(3, 3) = 0;
  set_mask(m, 0, mask);
  const auto bytes = serialize(m, Precision::f32);
  EXPECT_EQ(bytes.size(), serialized_header_size(3) + 4 * static_cast<std::size_t>(stored_scalars(m.spec())));
  const auto back = deserialize<float>(bytes);
  EXPECT_EQ(back.spec(), m.spec());
  EXPECT_EQ(flat_parameters(back), flat_parameters(m));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (!m.layers[l].batchnorm) continue;
    EXPECT_EQ(back.layers[l].batchnorm->running_var, m.layers[l].batchnorm->running_var);
    EXPECT_EQ(back.layers[l].batchnorm->gamma, m.layers[l].batchnorm->gamma);
  }
  EXPECT_EQ(back.layers[0].weight(3, 3), 0.0f);
}

TEST(Serialize, F16RoundTripEqualsQuantizedModel) {
  const auto m = oracle::random_model<float>(oracle::small_spec(6, {8, 4}, Activation::relu, true), 4);
  const auto bytes = serialize(m, Precision::f16);
  EXPECT_EQ(bytes.size(), serialized_header_size(3) + 2 * static_cast<std::size_t>(stored_scalars(m.spec())));
  const auto back = deserialize<float>(bytes);
  const auto q = quantize_f16(m);
  EXPECT_EQ(flat_parameters(back), flat_parameters(q));
  for (Index f = 0; f < flat_parameters(m).size(); ++f) {
    const float v = flat_parameters(m)(f);
    EXPECT_EQ(flat_parameters(q)(f), static_cast<float>(oracle::half_value(half_table().nearest(v))));
  }
}

TEST(Serialize, CorruptionIsDetected) {
  const auto m = oracle::random_model<float>(oracle::small_spec(3, {4}, Activation::elu, false), 5);
  const auto good = serialize(m, Precision::f32);
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(deserialize<float>(bad), FormatError);
  bad = good;
  bad[4] = 2;  // version
  EXPECT_THROW(deserialize<float>(bad), FormatError);
  bad = good;
  bad[17] ^= 1;  // inside the first layer descriptor
  EXPECT_THROW(deserialize<float>(bad), FormatError);
  bad = good;
  bad.pop_back();
  EXPECT_THROW(deserialize<float>(bad), FormatError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(deserialize<float>(bad), FormatError);
  EXPECT_THROW(deserialize<float>(std::span<const std::uint8_t>(good.data(), 10)), FormatError);
}

TEST(Serialize, OverflowIsCountedAndStoredAsInfinity) {
  auto m = oracle::random_model<float>(oracle::small_spec(3, {4}, Activation::elu, false), 5);
  m.layers[0].weight(1, 1) = 1e6f;
  m.layers[1].bias(0) = -7e4f;
  QuantizationReport q;
  const auto back = deserialize<float>(serialize(m, Precision::f16, &q));
  EXPECT_EQ(q.overflow_count, 2);
  EXPECT_EQ(back.layers[0].weight(1, 1), std::numeric_limits<float>::infinity());
  EXPECT_EQ(back.layers[1].bias(0), -std::numeric_limits<float>::infinity());
  const auto b = oracle::random_batch<float>(3, 50, 1);
  const auto e = evaluate_quantized(m, b);
  ASSERT_EQ(e.warnings.size(), 2u);
  EXPECT_NE(e.warnings[0].find("2 parameter"), std::string::npos);
  EXPECT_TRUE(std::isnan(e.metrics.auc));
}

TEST(Zip, ArchiveInflatesBackToInput) {
  const auto m = oracle::random_model<float>(oracle::small_spec(10, {16, 8}, Activation::elu, true), 6);
  const auto raw = serialize(m, Precision::f32);
  const auto zip = zip_single_entry("model.pkm", raw);
  ASSERT_EQ(read_u32(zip, 0), 0x04034b50u);
  EXPECT_EQ(read_u16(zip, 8), 8);  // deflate
  const std::uint32_t crc = read_u32(zip, 14);
  const std::uint32_t csize = read_u32(zip, 18);
  EXPECT_EQ(read_u32(zip, 22), raw.size());
  const std::size_t name_len = read_u16(zip, 26), extra_len = read_u16(zip, 28);
  EXPECT_EQ(std::string(zip.begin() + 30, zip.begin() + 30 + static_cast<std::ptrdiff_t>(name_len)), "model.pkm");
  const std::size_t data_at = 30 + name_len + extra_len;
  EXPECT_EQ(inflate_raw(zip.data() + data_at, csize, raw.size()), raw);
  EXPECT_EQ(crc, ::crc32(0L, raw.data(), static_cast<uInt>(raw.size())));
  // End of central directory record closes the archive.
  EXPECT_EQ(read_u32(zip, zip.size() - 22), 0x06054b50u);
  EXPECT_EQ(read_u32(zip, zip.size() - 6), data_at + csize);
}

TEST(Zip, DeflateRoundTripsArbitraryBytes) {
  std::vector<std::uint8_t> data(100000);
  std::mt19937 rng(1);
  for (auto& v : data) v = static_cast<std::uint8_t>(rng() % 7);
  const auto packed = deflate_raw(data);
  EXPECT_LT(packed.size(), data.size());
  EXPECT_EQ(inflate_raw(packed.data(), packed.size(), data.size()), data);
}

TEST(Sizes, ReportCountsAndMaskedZerosShrinkZip) {
  auto m = oracle::random_model<float>(oracle::small_spec(16, {32, 16}, Activation::elu, true), 7);
  const SizeReport full = measure_sizes(m, Precision::f32);
  EXPECT_EQ(full.param_count, stored_scalars(m.spec()));
  EXPECT_EQ(full.raw_bytes, full.payload_bytes + serialized_header_size(3));
  EXPECT_EQ(full.payload_bytes, 4 * static_cast<std::size_t>(full.param_count));
  const auto pruned = prune_parameters(m, damage_magnitude(m), 0.8);
  const SizeReport small = measure_sizes(pruned, Precision::f32);
  EXPECT_EQ(small.raw_bytes, full.raw_bytes);
  EXPECT_LT(small.zip_bytes, full.zip_bytes);
  EXPECT_EQ(full.nonzero_param_count - small.nonzero_param_count,
            m.unmasked_prunable_count() - pruned.unmasked_prunable_count());
  const SizeReport half = measure_sizes(m, Precision::f16);
  EXPECT_EQ(half.payload_bytes * 2, full.payload_bytes);
}

TEST(Sizes, PrecisionNamesRoundTrip) {
  EXPECT_EQ(parse_precision("f32"), Precision::f32);
  EXPECT_EQ(parse_precision(to_string(Precision::f16)), Precision::f16);
  EXPECT_THROW(parse_precision("f8"), SpecError);
}
