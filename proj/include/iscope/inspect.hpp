#pragma once

// Text views of the binary artifacts. Numbers are printed with 17
// significant digits, so parse_inspect_text(inspect_text(b)) == b.
//
//   format ISCP            format ISKM
//   version 1              size 3
//   iteration 120          probe_digest 0x...
//   count 2                values
//   params                 <row of m numbers>
//   <one number per line>  ...
//   momentum
//   <one number per line>

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "iscope/binary_io.hpp"
#include "iscope/dataset.hpp"
#include "iscope/entk.hpp"
#include "iscope/trainer.hpp"

namespace iscope {

/// "ISCP" or "ISKM"; throws ParseError for anything else.
inline std::string artifact_magic(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw ParseError("file too short for a magic number", 0);
  const std::string m(bytes.begin(), bytes.begin() + 4);
  if (m != "ISCP" && m != "ISKM") throw ParseError("unknown artifact magic '" + m + "'", 0);
  return m;
}

inline std::string inspect_text(const std::vector<std::uint8_t>& bytes) {
  using detail::format_double;
  std::ostringstream out;
  if (artifact_magic(bytes) == "ISCP") {
    const RawCheckpoint c = decode_checkpoint_raw(bytes);
    out << "format ISCP\nversion " << c.version << "\niteration " << c.iteration << "\ncount " << c.params.size()
        << "\nparams\n";
    for (double v : c.params) out << format_double(v) << '\n';
    out << "momentum\n";
    for (double v : c.momentum) out << format_double(v) << '\n';
    return out.str();
  }
  const KernelMatrix k = decode_kernel(bytes);
  char digest[32];
  std::snprintf(digest, sizeof digest, "0x%016llx", static_cast<unsigned long long>(k.probe_digest));
  out << "format ISKM\nsize " << k.values.rows() << "\nprobe_digest " << digest << "\nvalues\n";
  for (long i = 0; i < k.values.rows(); ++i) {
    for (long j = 0; j < k.values.cols(); ++j) out << (j ? " " : "") << format_double(k.values(i, j));
    out << '\n';
  }
  return out.str();
}

namespace inspect_detail {

class Lines {
 public:
  explicit Lines(const std::string& text) : in_(text) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) throw ConfigError("unexpected end of text", lineno_ + 1);
    ++lineno_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  /// Reads "key value" and returns value.
  std::string field(const std::string& key) {
    const std::string line = next();
    if (line.rfind(key + " ", 0) != 0) throw ConfigError("expected '" + key + "'", lineno_);
    return line.substr(key.size() + 1);
  }

  void expect(const std::string& word) {
    if (next() != word) throw ConfigError("expected '" + word + "'", lineno_);
  }

  std::uint64_t u64(const std::string& key) {
    const std::string v = field(key);
    std::size_t used = 0;
    std::uint64_t x = 0;
    try {
      x = std::stoull(v, &used, 0);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("bad integer '" + v + "'", lineno_);
    return x;
  }

  double number() { return detail::parse_double(next(), lineno_); }
  std::size_t line() const noexcept { return lineno_; }

 private:
  std::istringstream in_;
  std::size_t lineno_ = 0;
};

}  // namespace inspect_detail

/// Inverse of inspect_text: rebuilds the binary artifact, CRC included.
inline std::vector<std::uint8_t> parse_inspect_text(const std::string& text) {
  inspect_detail::Lines in(text);
  const std::string format = in.field("format");
  if (format == "ISCP") {
    const std::uint64_t version = in.u64("version");
    if (version != kCheckpointVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version), in.line());
    Checkpoint c;
    c.iteration = in.u64("iteration");
    const std::uint64_t n = in.u64("count");
    std::vector<double> p(n), m(n);
    in.expect("params");
    for (auto& v : p) v = in.number();
    in.expect("momentum");
    for (auto& v : m) v = in.number();
    std::vector<TensorShape> shape{TensorShape{"flat", {static_cast<std::size_t>(n)}}};
    auto layout = std::make_shared<const ParamLayout>(std::move(shape));
    c.params = ParamVector(layout, p);
    c.momentum = ParamVector(layout, m);
    return encode_checkpoint(c);
  }
  if (format == "ISKM") {
    const std::uint64_t m = in.u64("size");
    KernelMatrix k;
    k.probe_digest = in.u64("probe_digest");
    k.values.resize(static_cast<long>(m), static_cast<long>(m));
    in.expect("values");
    for (std::uint64_t i = 0; i < m; ++i) {
      std::istringstream row(in.next());
      for (std::uint64_t j = 0; j < m; ++j) {
        std::string cell;
        if (!(row >> cell)) throw ConfigError("kernel row too short", in.line());
        k.values(static_cast<long>(i), static_cast<long>(j)) = detail::parse_double(cell, in.line());
      }
    }
    return encode_kernel(k);
  }
  throw ConfigError("unknown format '" + format + "'", 1);
}

}  // namespace iscope
