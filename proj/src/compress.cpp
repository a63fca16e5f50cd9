#include "prunekit/compress.hpp"

#include <bit>
#include <cstring>

#include <zlib.h>

namespace prunekit {
namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }

  std::size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n) throw FormatError("serialized model is truncated");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data.data(), static_cast<uInt>(data.size())));
}

class PayloadWriter {
 public:
  PayloadWriter(ByteWriter& out, Precision p, QuantizationReport& report) : out_(out), p_(p), report_(report) {}

  template <typename Scalar>
  void value(Scalar v) {
    ++count_;
    if (v != Scalar(0)) ++nonzero_;
    const float f = static_cast<float>(v);
    if (p_ == Precision::f32) {
      out_.u32(std::bit_cast<std::uint32_t>(f));
    } else {
      const std::uint16_t h = float_to_half(f);
      if ((h & 0x7fffu) == 0x7c00u && std::isfinite(f)) ++report_.overflow_count;
      out_.u16(h);
    }
  }

  template <typename Derived>
  void values(const Eigen::MatrixBase<Derived>& m, bool row_major) {
    if (row_major) {
      for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) value(m(r, c));
    } else {
      for (Index i = 0; i < m.size(); ++i) value(m(i));
    }
  }

  Index count() const { return count_; }
  Index nonzero() const { return nonzero_; }

 private:
  ByteWriter& out_;
  Precision p_;
  QuantizationReport& report_;
  Index count_ = 0;
  Index nonzero_ = 0;
};

struct Encoded {
  std::vector<std::uint8_t> bytes;
  std::size_t header_bytes = 0;
  Index count = 0;
  Index nonzero = 0;
};

template <typename Scalar>
Encoded encode(const Model<Scalar>& model, Precision precision, QuantizationReport* report) {
  model.check_consistency();
  ByteWriter w;
  for (char c : kModelMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(precision));
  w.u8(static_cast<std::uint8_t>(model.loss));
  w.u32(static_cast<std::uint32_t>(model.input_dim));
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    w.u32(static_cast<std::uint32_t>(layer.out_width()));
    w.u32(static_cast<std::uint32_t>(layer.in_width()));
    w.u8(static_cast<std::uint8_t>(layer.activation));
    w.u8(layer.batchnorm ? 1 : 0);
    w.u16(0);
    w.f64(layer.dropout_rate);
  }
  w.u32(crc32_of(w.bytes()));
  const std::size_t header = w.size();

  QuantizationReport local;
  PayloadWriter payload(w, precision, report ? *report : local);
  if (report) *report = {};
  for (const auto& layer : model.layers) {
    payload.values(layer.weight, true);
    payload.values(layer.bias, false);
    if (layer.batchnorm) {
      payload.values(layer.batchnorm->gamma, false);
      payload.values(layer.batchnorm->beta, false);
      payload.values(layer.batchnorm->running_mean, false);
      payload.values(layer.batchnorm->running_var, false);
    }
  }
  return {std::move(w.bytes()), header, payload.count(), payload.nonzero()};
}

}  // namespace

std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f16"; }

Precision parse_precision(std::string_view name) {
  if (name == "f32") return Precision::f32;
  if (name == "f16") return Precision::f16;
  throw SpecError("precision must be f32 or f16");
}

std::uint16_t float_to_half(float value) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t exp = (x >> 23) & 0xffu;
  std::uint32_t mant = x & 0x7fffffu;

  if (exp == 0xffu) {
    if (mant == 0) return sign | 0x7c00u;
    return static_cast<std::uint16_t>(sign | 0x7e00u | (mant >> 13));
  }
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return sign | 0x7c00u;
  if (e <= 0) {
    if (e < -10) return sign;
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t m = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (m & 1u))) ++m;
    return static_cast<std::uint16_t>(sign | m);
  }
  auto h = static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13));
  const std::uint32_t rem = mant & 0x1fffu;
  // A carry out of the mantissa bumps the exponent, possibly to infinity.
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return h;
}

float half_to_float(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1fu;
  std::uint32_t mant = bits & 0x3ffu;
  if (exp == 0x1fu) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  if (exp == 0) {
    if (mant == 0) return std::bit_cast<float>(sign);
    // Subnormal: renormalize.
    int e = -1;
    do {
      ++e;
      mant <<= 1;
    } while ((mant & 0x400u) == 0);
    mant &= 0x3ffu;
    return std::bit_cast<float>(sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (mant << 13));
  }
  return std::bit_cast<float>(sign | ((exp + 127 - 15) << 23) | (mant << 13));
}

std::size_t serialized_header_size(std::size_t layer_count) { return 4 + 2 + 1 + 1 + 4 + 4 + 20 * layer_count + 4; }

template <typename Scalar>
std::vector<std::uint8_t> serialize(const Model<Scalar>& model, Precision precision, QuantizationReport* report) {
  return encode(model, precision, report).bytes;
}

template <typename Scalar>
Model<Scalar> deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  for (char c : kModelMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError("bad magic: not a serialized model");
  if (r.u16() != kModelFormatVersion) throw FormatError("unsupported model format version");
  const std::uint8_t precision_byte = r.u8();
  const std::uint8_t loss_byte = r.u8();
  const std::uint32_t input_dim = r.u32();
  const std::uint32_t layer_count = r.u32();
  if (layer_count == 0 || layer_count > 4096) throw FormatError("implausible layer count");

  struct Shape {
    std::uint32_t out, in;
    std::uint8_t activation, has_bn;
    double dropout;
  };
  std::vector<Shape> shapes;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    Shape s{};
    s.out = r.u32();
    s.in = r.u32();
    s.activation = r.u8();
    s.has_bn = r.u8();
    if (r.u16() != 0) throw FormatError("reserved header field is not zero");
    s.dropout = r.f64();
    shapes.push_back(s);
  }
  const std::size_t header_end = r.position();
  const std::uint32_t stored_crc = r.u32();
  if (stored_crc != crc32_of(bytes.first(header_end))) throw FormatError("header checksum mismatch");
  if (precision_byte > 1) throw FormatError("unknown precision");
  if (loss_byte > 1) throw FormatError("unknown loss");
  const auto precision = static_cast<Precision>(precision_byte);

  std::size_t scalars = 0;
  for (const auto& s : shapes) scalars += static_cast<std::size_t>(s.out) * (s.in + 1) + (s.has_bn ? 4u * s.out : 0u);
  const std::size_t width = precision == Precision::f32 ? 4 : 2;
  if (r.remaining() != scalars * width) throw FormatError("payload length does not match header");

  auto next = [&]() -> Scalar {
    if (precision == Precision::f32) return static_cast<Scalar>(std::bit_cast<float>(r.u32()));
    return static_cast<Scalar>(half_to_float(r.u16()));
  };

  Model<Scalar> model;
  model.input_dim = static_cast<int>(input_dim);
  model.loss = static_cast<LossKind>(loss_byte);
  for (const auto& s : shapes) {
    if (s.activation > 3 || s.has_bn > 1) throw FormatError("invalid layer descriptor");
    DenseLayer<Scalar> layer;
    layer.activation = static_cast<Activation>(s.activation);
    layer.dropout_rate = s.dropout;
    layer.weight.resize(s.out, s.in);
    for (Index i = 0; i < layer.weight.rows(); ++i)
      for (Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = next();
    layer.bias.resize(s.out);
    for (Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = next();
    if (s.has_bn) {
      BatchNorm<Scalar> bn;
      for (auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
        v->resize(s.out);
        for (Index i = 0; i < v->size(); ++i) (*v)(i) = next();
      }
      layer.batchnorm = std::move(bn);
    }
    model.layers.push_back(std::move(layer));
  }
  try {
    model.check_consistency();
  } catch (const DimensionError& e) {
    throw FormatError(std::string("inconsistent layer shapes: ") + e.what());
  }
  return model;
}

std::vector<std::uint8_t> deflate_raw(std::span<const std::uint8_t> data, int level) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw std::runtime_error("deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(data.size())));
  zs.next_in = const_cast<Bytef*>(data.data());
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("deflate did not finish");
  out.resize(produced);
  return out;
}

std::vector<std::uint8_t> zip_single_entry(std::string_view name, std::span<const std::uint8_t> data, int level) {
  const std::vector<std::uint8_t> body = deflate_raw(data, level);
  const std::uint32_t crc = crc32_of(data);
  const auto name_len = static_cast<std::uint16_t>(name.size());
  constexpr std::uint16_t kVersion = 20, kDeflate = 8, kTime = 0, kDate = (1 << 5) | 1;  // 1980-01-01
  std::span<const std::uint8_t> name_bytes(reinterpret_cast<const std::uint8_t*>(name.data()), name.size());

  ByteWriter w;
  w.u32(0x04034b50u);
  w.u16(kVersion);
  w.u16(0);
  w.u16(kDeflate);
  w.u16(kTime);
  w.u16(kDate);
  w.u32(crc);
  w.u32(static_cast<std::uint32_t>(body.size()));
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u16(name_len);
  w.u16(0);
  w.raw(name_bytes);
  w.raw(body);

  const auto central_offset = static_cast<std::uint32_t>(w.size());
  w.u32(0x02014b50u);
  w.u16(kVersion);
  w.u16(kVersion);
  w.u16(0);
  w.u16(kDeflate);
  w.u16(kTime);
  w.u16(kDate);
  w.u32(crc);
  w.u32(static_cast<std::uint32_t>(body.size()));
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u16(name_len);
  w.u16(0);
  w.u16(0);
  w.u16(0);
  w.u16(0);
  w.u32(0);
  w.u32(0);
  w.raw(name_bytes);
  const auto central_size = static_cast<std::uint32_t>(w.size()) - central_offset;

  w.u32(0x06054b50u);
  w.u16(0);
  w.u16(0);
  w.u16(1);
  w.u16(1);
  w.u32(central_size);
  w.u32(central_offset);
  w.u16(0);
  return std::move(w.bytes());
}

template <typename Scalar>
SizeReport measure_sizes(const Model<Scalar>& model, Precision precision) {
  QuantizationReport q;
  const Encoded e = encode(model, precision, &q);
  SizeReport s;
  s.raw_bytes = e.bytes.size();
  s.zip_bytes = zip_single_entry("model.pkm", e.bytes).size();
  s.payload_bytes = e.bytes.size() - e.header_bytes;
  s.precision = precision;
  s.param_count = e.count;
  s.nonzero_param_count = e.nonzero;
  s.overflow_count = q.overflow_count;
  return s;
}

template std::vector<std::uint8_t> serialize(const Model<float>&, Precision, QuantizationReport*);
template std::vector<std::uint8_t> serialize(const Model<double>&, Precision, QuantizationReport*);
template Model<float> deserialize<float>(std::span<const std::uint8_t>);
template Model<double> deserialize<double>(std::span<const std::uint8_t>);
template SizeReport measure_sizes(const Model<float>&, Precision);
template SizeReport measure_sizes(const Model<double>&, Precision);

}  // namespace prunekit
