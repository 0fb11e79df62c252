#pragma once

// AAUD tensor container and the experiment manifest. The byte layout is
// documented in docs/FORMAT.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "aaud/authority.hpp"
#include "aaud/geometry.hpp"
#include "aaud/trace.hpp"

namespace aaud::dump {

inline constexpr char kMagic[4] = {'A', 'A', 'U', 'D'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::uint8_t kLittleEndian = 1;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kMaxRank = 8;

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;  // row-major

  std::uint64_t element_count() const noexcept;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Tensor from doubles, rounded to float. Rejects non-finite values.
Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<const double> values);

/// Named tensors; iteration (and file) order is by name.
class TensorSet {
 public:
  /// Throws duplicate when the name is taken.
  void add(std::string name, Tensor tensor);
  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  std::size_t size() const noexcept { return tensors_.size(); }
  const std::map<std::string, Tensor, std::less<>>& entries() const noexcept { return tensors_; }
  friend bool operator==(const TensorSet&, const TensorSet&) = default;

 private:
  std::map<std::string, Tensor, std::less<>> tensors_;
};

std::vector<std::uint8_t> encode(const TensorSet& tensors);

/// Validates header, index and checksums before materialising any tensor.
TensorSet decode(std::span<const std::uint8_t> bytes);

void write_dump(const TensorSet& tensors, const std::filesystem::path& path);
TensorSet read_dump(const std::filesystem::path& path);

}  // namespace aaud::dump

namespace aaud {

inline constexpr int kManifestSchemaVersion = 1;

struct ManifestAnswer {
  std::string label;
  TokenId token_id = 0;
};

/// Either one tensor (L x d trace, or a d-vector holding only the final
/// state) or one d-vector per layer.
using ConditionTensors = std::variant<std::string, std::vector<std::string>>;

struct ManifestInstance {
  std::string instance_id;
  std::string sensor_answer;  // answer label
  std::string user_answer;
  std::array<ConditionTensors, 4> tensors;  // indexed by Condition
};

struct ExperimentManifest {
  int schema_version = kManifestSchemaVersion;
  std::string model_label;
  std::size_t hidden_dim = 0;
  std::size_t num_layers = 0;
  std::size_t vocab_size = 0;
  std::string unembedding_rows;
  std::string unembedding_gamma;
  std::optional<std::string> unembedding_biases;  // zeros when absent
  std::vector<ManifestAnswer> answers;
  std::vector<ManifestInstance> instances;

  std::vector<TokenId> answer_token_ids() const;
  TokenId token_for(std::string_view label) const;
};

/// Parses and structurally validates a manifest. Errors carry
/// ErrorCode::manifest.
ExperimentManifest parse_manifest(std::string_view json_text);
ExperimentManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const ExperimentManifest& manifest);

/// Checks every referenced tensor exists with the declared shape.
void validate_manifest(const ExperimentManifest& manifest, const dump::TensorSet& tensors);

struct AssembledSuite {
  EffectiveUnembedding unembedding;
  std::vector<TokenId> answer_token_ids;
  std::vector<ConflictRecord> records;  // manifest order
  std::vector<TraceSet> traces;         // parallel to records
  bool full_traces = false;             // every condition has all L layers
};

AssembledSuite assemble_records(const ExperimentManifest& manifest, const dump::TensorSet& tensors);

}  // namespace aaud
