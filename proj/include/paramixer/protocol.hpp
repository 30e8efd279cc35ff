#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace paramixer {

class ProtocolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ProtocolKind { chord, cdil };

std::string_view to_string(ProtocolKind kind);
ProtocolKind parse_protocol_kind(std::string_view name);

/// Placement rule plus sizes (N positions, K stored entries per row, M factors).
/// K and M of zero mean "use the default for this N" until resolved().
struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::chord;
  std::int64_t seq_len = 0;
  std::int64_t links = 0;
  std::int64_t factors = 0;

  /// Fills unset K/M with ceil(log2 N) factors and, for CHORD, ceil(log2 N)+1
  /// links (3 for CDIL), then validates.
  ProtocolSpec resolved() const;
  void validate() const;

  /// Non-fatal findings, e.g. CHORD offsets that wrap onto an earlier column.
  std::vector<std::string> warnings() const;

  bool operator==(const ProtocolSpec&) const = default;
};

std::int64_t ceil_log2(std::int64_t n);

using IndexTable = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::int32_t> chord_columns(std::int64_t row, const ProtocolSpec& spec);
/// `factor` is 1-based; dilation for factor m is 2^(m-1).
std::vector<std::int32_t> cdil_columns(std::int64_t row, std::int64_t factor, const ProtocolSpec& spec);

/// Fixed non-zero positions of every factor. slice(m)(i, k) is the column of
/// the k-th stored entry of row i in factor m (0-based m). Column 0 is always i.
class SparseLayout {
 public:
  explicit SparseLayout(const ProtocolSpec& spec);

  const ProtocolSpec& spec() const { return spec_; }
  std::int64_t seq_len() const { return spec_.seq_len; }
  std::int64_t links() const { return spec_.links; }
  std::int64_t factors() const { return spec_.factors; }
  const IndexTable& slice(std::int64_t m) const { return slices_.at(static_cast<std::size_t>(m)); }

  /// Number of stored column indices actually held.
  std::int64_t allocated_entries() const;

  bool operator==(const SparseLayout& other) const;

 private:
  ProtocolSpec spec_;
  std::vector<IndexTable> slices_;
};

std::shared_ptr<const SparseLayout> build_layout(const ProtocolSpec& spec);

/// True iff the OR/AND product adj(W1)·adj(W2)···adj(WM) has no zero entry.
bool reachability_complete(const SparseLayout& layout);

/// Rank of the N×N 0/1 circulant whose first column has ones at `offsets`,
/// computed as N - deg gcd(sum x^o, x^N - 1) in exact arithmetic.
std::int64_t circulant_rank(std::span<const std::int64_t> offsets, std::int64_t n);

/// Distinct offsets (mod N) a factor of this spec places relative to the diagonal.
std::vector<std::int64_t> offset_pattern(const ProtocolSpec& spec, std::int64_t factor = 1);

/// M·N·K.
std::int64_t stored_entries(const ProtocolSpec& spec);

/// `m,i,k,column` rows preceded by one JSON header line {kind, N, K, M}.
void write_layout_csv(std::ostream& out, const SparseLayout& layout);

}  // namespace paramixer
