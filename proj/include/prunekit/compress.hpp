#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/metrics.hpp"

namespace prunekit {

enum class Precision : std::uint8_t { f32 = 0, f16 = 1 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view name);

// IEEE 754 binary16, round to nearest, ties to even. Finite values beyond the
// binary16 range become signed infinity.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

struct QuantizationReport {
  Index overflow_count = 0;  // finite values stored as +-inf
};

// Serialized model layout (all integers little-endian):
//
//   magic "PKMD" | u16 version (1) | u8 precision | u8 loss | u32 input_dim |
//   u32 layer_count | per layer { u32 out | u32 in | u8 activation |
//   u8 has_batchnorm | u16 reserved (0) | f64 dropout_rate } | u32 crc32 of
//   every preceding header byte
//
// followed by the payload, per layer in forward order: weight (row-major),
// bias, then gamma, beta, running_mean, running_var when batch-norm is present.
// Values are binary32 or binary16 per the precision byte. Masks are not stored;
// pruned entries are plain zeros.
inline constexpr char kModelMagic[4] = {'P', 'K', 'M', 'D'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

template <typename Scalar>
std::vector<std::uint8_t> serialize(const Model<Scalar>& model, Precision precision,
                                    QuantizationReport* report = nullptr);

// Throws FormatError on bad magic/version/checksum or a truncated payload.
template <typename Scalar>
Model<Scalar> deserialize(std::span<const std::uint8_t> bytes);

// Number of header bytes for a model of this shape.
std::size_t serialized_header_size(std::size_t layer_count);

// Raw DEFLATE stream (no zlib/gzip framing).
std::vector<std::uint8_t> deflate_raw(std::span<const std::uint8_t> data, int level = 6);
// A .zip archive holding one DEFLATE-compressed entry.
std::vector<std::uint8_t> zip_single_entry(std::string_view name, std::span<const std::uint8_t> data, int level = 6);

struct SizeReport {
  std::size_t raw_bytes = 0;      // serialized length
  std::size_t zip_bytes = 0;      // zip container, DEFLATE level 6
  std::size_t payload_bytes = 0;  // raw_bytes minus header
  Precision precision = Precision::f32;
  Index param_count = 0;  // stored scalars
  Index nonzero_param_count = 0;
  Index overflow_count = 0;
};

template <typename Scalar>
SizeReport measure_sizes(const Model<Scalar>& model, Precision precision);

// Every stored scalar passed through binary16 and back.
template <typename Scalar>
Model<Scalar> quantize_f16(const Model<Scalar>& model, QuantizationReport* report = nullptr) {
  return deserialize<Scalar>(serialize(model, Precision::f16, report));
}

struct QuantizedEvaluation {
  MetricsRecord metrics;
  QuantizationReport quantization;
  std::vector<std::string> warnings;
};

template <typename Scalar>
QuantizedEvaluation evaluate_quantized(const Model<Scalar>& model, const Batch<Scalar>& eval_set,
                                       double target_fpr = 0.001) {
  QuantizedEvaluation out;
  const Model<Scalar> q = quantize_f16(model, &out.quantization);
  if (out.quantization.overflow_count > 0)
    out.warnings.push_back(std::to_string(out.quantization.overflow_count) +
                           " parameter(s) overflowed binary16 and were stored as infinity");
  try {
    out.metrics = evaluate(q, eval_set, target_fpr);
  } catch (const NumericalError& e) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.metrics = {nan, nan, target_fpr, nan, nan, eval_set.size()};
    out.warnings.push_back(std::string("evaluation failed: ") + e.what());
  }
  return out;
}

}  // namespace prunekit
