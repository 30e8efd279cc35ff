#include "paramixer/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <bit>
#include <set>
#include <utility>

#include <boost/multiprecision/cpp_int.hpp>
#include "json.hpp"

namespace paramixer {

namespace {

std::int64_t wrap(std::int64_t value, std::int64_t n) {
  const std::int64_t r = value % n;
  return r < 0 ? r + n : r;
}

// Offset p_k · d for link k = 2..K (0-based position k-1 in the row).
std::vector<std::int64_t> cdil_offsets(std::int64_t links, std::int64_t dilation) {
  const std::int64_t half = (links - 1) / 2;
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(links - 1));
  for (std::int64_t p = 1; p <= half; ++p) out.push_back(p * dilation);
  for (std::int64_t p = 1; p <= half; ++p) out.push_back(-p * dilation);
  return out;
}

// 2^(m-1) mod N without overflowing for large m.
std::int64_t pow2_mod(std::int64_t exponent, std::int64_t n) {
  std::int64_t result = 1 % n;
  for (std::int64_t e = 0; e < exponent; ++e) result = (result * 2) % n;
  return result;
}

}  // namespace

std::string_view to_string(ProtocolKind kind) {
  return kind == ProtocolKind::chord ? "CHORD" : "CDIL";
}

ProtocolKind parse_protocol_kind(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "CHORD") return ProtocolKind::chord;
  if (upper == "CDIL") return ProtocolKind::cdil;
  throw ProtocolError("unknown protocol '" + std::string(name) + "' (expected CHORD or CDIL)");
}

std::int64_t ceil_log2(std::int64_t n) {
  if (n <= 1) return 0;
  return static_cast<std::int64_t>(std::bit_width(static_cast<std::uint64_t>(n - 1)));
}

ProtocolSpec ProtocolSpec::resolved() const {
  ProtocolSpec out = *this;
  if (out.seq_len < 2) throw ProtocolError("sequence length must be >= 2, got " + std::to_string(out.seq_len));
  if (out.factors == 0) out.factors = ceil_log2(out.seq_len);
  if (out.links == 0) out.links = out.kind == ProtocolKind::chord ? ceil_log2(out.seq_len) + 1 : 3;
  out.validate();
  return out;
}

void ProtocolSpec::validate() const {
  if (seq_len < 2) throw ProtocolError("sequence length must be >= 2, got " + std::to_string(seq_len));
  if (factors < 1) throw ProtocolError("factor count must be >= 1, got " + std::to_string(factors));
  if (seq_len > std::int64_t{1} << 30) throw ProtocolError("sequence length too large");
  if (kind == ProtocolKind::chord) {
    if (links < 2) throw ProtocolError("CHORD needs at least 2 links per row, got " + std::to_string(links));
    if (links > 62) throw ProtocolError("CHORD link count too large");
  } else {
    if (links < 3 || links % 2 == 0)
      throw ProtocolError("CDIL needs an odd link count >= 3, got " + std::to_string(links));
  }
}

std::vector<std::string> ProtocolSpec::warnings() const {
  std::vector<std::string> out;
  for (std::int64_t m = 1; m <= (kind == ProtocolKind::chord ? 1 : factors); ++m) {
    std::set<std::int64_t> seen{0};
    std::int64_t duplicates = 0;
    std::vector<std::int64_t> offsets;
    if (kind == ProtocolKind::chord) {
      for (std::int64_t k = 2; k <= links; ++k) offsets.push_back(pow2_mod(k - 2, seq_len));
    } else {
      offsets = cdil_offsets(links, pow2_mod(m - 1, seq_len));
    }
    for (auto o : offsets)
      if (!seen.insert(wrap(o, seq_len)).second) ++duplicates;
    if (duplicates > 0) {
      out.push_back(std::string(to_string(kind)) + " factor " + std::to_string(m) + ": " + std::to_string(duplicates) +
                    " link(s) per row coincide mod N=" + std::to_string(seq_len) + "; stored as duplicate columns");
    }
  }
  return out;
}

std::vector<std::int32_t> chord_columns(std::int64_t row, const ProtocolSpec& spec) {
  if (spec.kind != ProtocolKind::chord) throw ProtocolError("chord_columns called with a CDIL spec");
  spec.validate();
  if (row < 0 || row >= spec.seq_len) throw ProtocolError("row index " + std::to_string(row) + " out of range");
  std::vector<std::int32_t> cols(static_cast<std::size_t>(spec.links));
  cols[0] = static_cast<std::int32_t>(row);
  for (std::int64_t k = 2; k <= spec.links; ++k)
    cols[static_cast<std::size_t>(k - 1)] = static_cast<std::int32_t>(wrap(row + pow2_mod(k - 2, spec.seq_len), spec.seq_len));
  return cols;
}

std::vector<std::int32_t> cdil_columns(std::int64_t row, std::int64_t factor, const ProtocolSpec& spec) {
  if (spec.kind != ProtocolKind::cdil) throw ProtocolError("cdil_columns called with a CHORD spec");
  spec.validate();
  if (row < 0 || row >= spec.seq_len) throw ProtocolError("row index " + std::to_string(row) + " out of range");
  if (factor < 1 || factor > spec.factors)
    throw ProtocolError("factor index " + std::to_string(factor) + " outside 1.." + std::to_string(spec.factors));
  const auto offsets = cdil_offsets(spec.links, pow2_mod(factor - 1, spec.seq_len));
  std::vector<std::int32_t> cols(static_cast<std::size_t>(spec.links));
  cols[0] = static_cast<std::int32_t>(row);
  for (std::size_t k = 0; k < offsets.size(); ++k)
    cols[k + 1] = static_cast<std::int32_t>(wrap(row + offsets[k], spec.seq_len));
  return cols;
}

SparseLayout::SparseLayout(const ProtocolSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto n = spec_.seq_len;
  const auto k = spec_.links;
  slices_.reserve(static_cast<std::size_t>(spec_.factors));
  for (std::int64_t m = 1; m <= spec_.factors; ++m) {
    if (spec_.kind == ProtocolKind::chord && m > 1) {
      slices_.push_back(slices_.front());
      continue;
    }
    IndexTable table(n, k);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto row = spec_.kind == ProtocolKind::chord ? chord_columns(i, spec_) : cdil_columns(i, m, spec_);
      for (std::int64_t j = 0; j < k; ++j) table(i, j) = row[static_cast<std::size_t>(j)];
    }
    slices_.push_back(std::move(table));
  }
}

std::int64_t SparseLayout::allocated_entries() const {
  std::int64_t total = 0;
  for (const auto& s : slices_) total += s.size();
  return total;
}

bool SparseLayout::operator==(const SparseLayout& other) const {
  if (!(spec_ == other.spec_) || slices_.size() != other.slices_.size()) return false;
  for (std::size_t m = 0; m < slices_.size(); ++m)
    if (slices_[m] != other.slices_[m]) return false;
  return true;
}

std::shared_ptr<const SparseLayout> build_layout(const ProtocolSpec& spec) {
  return std::make_shared<const SparseLayout>(spec);
}

namespace {

using Bits = std::vector<std::uint64_t>;

bool all_set(const Bits& bits, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i)
    if (!(bits[static_cast<std::size_t>(i >> 6)] >> (i & 63) & 1U)) return false;
  return true;
}

// Columns reachable from `row` through W1, then W2, ..., then WM.
Bits reachable_from(const SparseLayout& layout, std::int64_t row) {
  const auto n = layout.seq_len();
  const auto words = static_cast<std::size_t>((n + 63) / 64);
  Bits current(words, 0);
  current[static_cast<std::size_t>(row >> 6)] |= std::uint64_t{1} << (row & 63);
  for (std::int64_t m = 0; m < layout.factors(); ++m) {
    const auto& cols = layout.slice(m);
    Bits next(words, 0);
    for (std::int64_t j = 0; j < n; ++j) {
      if (!(current[static_cast<std::size_t>(j >> 6)] >> (j & 63) & 1U)) continue;
      for (std::int64_t k = 0; k < cols.cols(); ++k) {
        const std::int64_t c = cols(j, k);
        next[static_cast<std::size_t>(c >> 6)] |= std::uint64_t{1} << (c & 63);
      }
    }
    current = std::move(next);
  }
  return current;
}

// Every slice row i equals row 0 shifted by i (mod N).
bool shift_invariant(const SparseLayout& layout) {
  const auto n = layout.seq_len();
  for (std::int64_t m = 0; m < layout.factors(); ++m) {
    const auto& cols = layout.slice(m);
    for (std::int64_t i = 1; i < n; ++i)
      for (std::int64_t k = 0; k < cols.cols(); ++k)
        if (cols(i, k) != wrap(cols(0, k) + i, n)) return false;
  }
  return true;
}

}  // namespace

bool reachability_complete(const SparseLayout& layout) {
  const auto n = layout.seq_len();
  // A product of circulant patterns is circulant, so row 0 decides it.
  const std::int64_t rows = shift_invariant(layout) ? 1 : n;
  for (std::int64_t i = 0; i < rows; ++i)
    if (!all_set(reachable_from(layout, i), n)) return false;
  return true;
}

namespace {

using BigInt = boost::multiprecision::cpp_int;
using Poly = std::vector<BigInt>;  // coefficient of x^i at index i

void trim(Poly& p) {
  while (!p.empty() && p.back() == 0) p.pop_back();
}

void make_primitive(Poly& p) {
  BigInt content = 0;
  for (const auto& c : p) content = gcd(content, c);
  if (content == 0) return;
  if (p.back() < 0) content = -content;
  for (auto& c : p) c /= content;
}

// Scalar multiple of the remainder of a by b; both non-zero and trimmed.
Poly pseudo_remainder(Poly a, const Poly& b) {
  const BigInt lead_b = b.back();
  while (!a.empty() && a.size() >= b.size()) {
    const BigInt lead_a = a.back();
    const std::size_t shift = a.size() - b.size();
    for (auto& c : a) c *= lead_b;
    for (std::size_t i = 0; i < b.size(); ++i) a[shift + i] -= lead_a * b[i];
    trim(a);
    make_primitive(a);
  }
  return a;
}

}  // namespace

std::int64_t circulant_rank(std::span<const std::int64_t> offsets, std::int64_t n) {
  if (offsets.empty()) throw ProtocolError("circulant_rank needs at least one offset");
  if (n < 1) throw ProtocolError("circulant size must be positive");
  const std::set<std::int64_t> distinct(offsets.begin(), offsets.end());
  Poly f(static_cast<std::size_t>(n), 0);
  for (auto o : distinct) {
    if (o < 0 || o >= n) throw ProtocolError("offset " + std::to_string(o) + " outside [0, N)");
    f[static_cast<std::size_t>(o)] = 1;
  }
  trim(f);
  Poly g(static_cast<std::size_t>(n) + 1, 0);
  g.front() = -1;
  g.back() = 1;
  Poly a = std::move(g);
  Poly b = std::move(f);
  make_primitive(b);
  while (!b.empty()) {
    Poly r = pseudo_remainder(a, b);
    a = std::move(b);
    b = std::move(r);
  }
  const auto degree = static_cast<std::int64_t>(a.size()) - 1;
  return n - degree;
}

std::vector<std::int64_t> offset_pattern(const ProtocolSpec& spec, std::int64_t factor) {
  const SparseLayout layout(spec);
  if (factor < 1 || factor > spec.factors) throw ProtocolError("factor index out of range");
  const auto& cols = layout.slice(factor - 1);
  std::set<std::int64_t> distinct;
  for (std::int64_t k = 0; k < cols.cols(); ++k) distinct.insert(cols(0, k));
  return {distinct.begin(), distinct.end()};
}

std::int64_t stored_entries(const ProtocolSpec& spec) {
  spec.validate();
  return spec.factors * spec.seq_len * spec.links;
}

void write_layout_csv(std::ostream& out, const SparseLayout& layout) {
  const auto& spec = layout.spec();
  nlohmann::ordered_json header;
  header["kind"] = to_string(spec.kind);
  header["N"] = spec.seq_len;
  header["K"] = spec.links;
  header["M"] = spec.factors;
  out << header.dump() << '\n' << "m,i,k,column\n";
  for (std::int64_t m = 0; m < spec.factors; ++m) {
    const auto& cols = layout.slice(m);
    for (std::int64_t i = 0; i < cols.rows(); ++i)
      for (std::int64_t k = 0; k < cols.cols(); ++k) out << m << ',' << i << ',' << k << ',' << cols(i, k) << '\n';
  }
}

}  // namespace paramixer
