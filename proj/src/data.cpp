#include "prunekit/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>

namespace prunekit {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

FormatError csv_error(const std::string& path, std::size_t line, const std::string& what) {
  return FormatError(path + ":" + std::to_string(line) + ": " + what);
}

Dataset draw_samples(const SynthConfig& c, const std::vector<Eigen::VectorXd>& anchors,
                     const std::vector<Eigen::VectorXd>& directions, Index n, double balance, std::uint64_t stream,
                     DatasetRole role) {
  std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<Index> pick(0, c.clusters - 1);

  Dataset d;
  d.role = role;
  d.features.resize(c.feature_dim, n);
  d.labels = Eigen::VectorXd::Zero(n);
  const auto n_pos = static_cast<Index>(std::llround(balance * static_cast<double>(n)));
  d.labels.head(n_pos).setOnes();
  std::shuffle(d.labels.data(), d.labels.data() + n, rng);
  for (Index s = 0; s < n; ++s) {
    const Index k = pick(rng);
    const double side = d.labels(s) == 1.0 ? 0.5 : -0.5;
    for (Index j = 0; j < c.feature_dim; ++j) d.features(j, s) = anchors[k](j) + side * c.difficulty * directions[k](j) + noise(rng);
  }
  std::ostringstream prov;
  prov << "synth seed=" << c.seed << " difficulty=" << c.difficulty << " clusters=" << c.clusters
       << " role=" << (role == DatasetRole::train ? "train" : "test");
  d.provenance = prov.str();
  return d;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_train < 1 || n_test < 1) throw SpecError("synth: n_train and n_test must be >= 1");
  if (feature_dim < 1) throw SpecError("synth: feature_dim must be >= 1");
  if (!(pos_balance_train > 0.0 && pos_balance_train < 1.0) || !(pos_balance_test > 0.0 && pos_balance_test < 1.0))
    throw SpecError("synth: class balances must be in (0, 1)");
  if (!(difficulty >= 0.0)) throw SpecError("synth: difficulty must be >= 0");
  if (clusters < 1) throw SpecError("synth: clusters must be >= 1");
  if (!(anchor_spread >= 0.0)) throw SpecError("synth: anchor_spread must be >= 0");
}

std::pair<Dataset, Dataset> synth_generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> anchors, directions;
  for (Index k = 0; k < config.clusters; ++k) {
    Eigen::VectorXd a(config.feature_dim), v(config.feature_dim);
    for (Index j = 0; j < config.feature_dim; ++j) a(j) = config.anchor_spread * normal(rng);
    for (Index j = 0; j < config.feature_dim; ++j) v(j) = normal(rng);
    anchors.push_back(std::move(a));
    directions.push_back(v.normalized());
  }
  return {draw_samples(config, anchors, directions, config.n_train, config.pos_balance_train, 1, DatasetRole::train),
          draw_samples(config, anchors, directions, config.n_test, config.pos_balance_test, 2, DatasetRole::test)};
}

Dataset load_csv(const std::string& path, DatasetRole role) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    for (auto f : split(line)) header.emplace_back(f);
    break;
  }
  if (header.empty()) throw FormatError(path + ": missing header row");
  const auto label_it = std::find(header.begin(), header.end(), "label");
  if (label_it == header.end()) throw csv_error(path, line_no, "header has no 'label' column");
  if (std::count(header.begin(), header.end(), "label") > 1) throw csv_error(path, line_no, "duplicate 'label' column");
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t n_cols = header.size();
  if (n_cols < 2) throw csv_error(path, line_no, "need at least one feature column");

  std::vector<double> values;
  std::vector<double> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != n_cols)
      throw csv_error(path, line_no,
                      "expected " + std::to_string(n_cols) + " fields, found " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < n_cols; ++c) {
      double v = 0.0;
      if (!parse_double(fields[c], v) || !std::isfinite(v))
        throw csv_error(path, line_no, "non-numeric value '" + std::string(fields[c]) + "' in column " + header[c]);
      if (c == label_col) {
        if (v != 0.0 && v != 1.0) throw csv_error(path, line_no, "label must be 0 or 1, got " + std::string(fields[c]));
        labels.push_back(v);
      } else {
        values.push_back(v);
      }
    }
  }
  if (labels.empty()) throw FormatError(path + ": no data rows");

  Dataset d;
  d.role = role;
  const auto n = static_cast<Index>(labels.size());
  const auto dim = static_cast<Index>(n_cols - 1);
  d.features = Eigen::Map<const Eigen::MatrixXd>(values.data(), dim, n);
  d.labels = Eigen::Map<const Eigen::VectorXd>(labels.data(), n);
  d.provenance = "csv " + path;
  return d;
}

void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (Index j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  out.precision(17);
  for (Index s = 0; s < data.size(); ++s) {
    for (Index j = 0; j < data.dim(); ++j) out << data.features(j, s) << ',';
    out << static_cast<int>(data.labels(s)) << '\n';
  }
}

std::vector<Index> resample_indices(Index n, Index count, std::uint64_t seed) {
  if (count < 0 || count > n) throw SpecError("resample count must be in [0, n]");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

Dataset resample(const Dataset& data, Index count, std::uint64_t seed) {
  const auto idx = resample_indices(data.size(), count, seed);
  Dataset out;
  out.role = data.role;
  out.features.resize(data.dim(), count);
  out.labels.resize(count);
  for (Index i = 0; i < count; ++i) {
    out.features.col(i) = data.features.col(idx[i]);
    out.labels(i) = data.labels(idx[i]);
  }
  out.provenance = data.provenance + " resample(" + std::to_string(count) + ", seed=" + std::to_string(seed) + ")";
  return out;
}

}  // namespace prunekit
