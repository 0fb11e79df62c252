#include "aaud/dumpio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "json.hpp"

#include "aaud/error.hpp"
#include "aaud/parallel.hpp"

namespace aaud::dump {

namespace {

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  constexpr std::size_t kChunk = std::size_t{1} << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    c = crc32(c, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(c);
}

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(value) >> (8 * i)));
  }
}

template <class T>
T get(std::span<const std::uint8_t> bytes, std::size_t pos) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t{bytes[pos + i]} << (8 * i);
  return static_cast<T>(v);
}

void put_float(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put<std::uint32_t>(out, bits);
}

// Product of dims, or nullopt on overflow of the byte count.
std::optional<std::uint64_t> checked_count(std::span<const std::uint64_t> dims) {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / 4 / d) return std::nullopt;
    n *= d;
  }
  return n;
}

}  // namespace

std::uint64_t Tensor::element_count() const noexcept {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<const double> values) {
  Tensor t;
  t.dims = std::move(dims);
  if (t.element_count() != values.size()) {
    fail(ErrorCode::shape, "tensor dims do not match the number of values");
  }
  t.values.reserve(values.size());
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::data, "tensor value is not finite");
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) fail(ErrorCode::data, "tensor value overflows float");
    t.values.push_back(f);
  }
  return t;
}

void TensorSet::add(std::string name, Tensor tensor) {
  if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
    fail(ErrorCode::data, "tensor name must have 1 to 65535 bytes");
  }
  if (tensor.dims.size() > kMaxRank) fail(ErrorCode::shape, "tensor rank above " + std::to_string(kMaxRank));
  if (tensor.element_count() != tensor.values.size()) {
    fail(ErrorCode::shape, "tensor '" + name + "' dims do not match its values");
  }
  const auto [it, inserted] = tensors_.emplace(std::move(name), std::move(tensor));
  if (!inserted) fail(ErrorCode::duplicate, "duplicate tensor name '" + it->first + "'");
}

const Tensor* TensorSet::find(std::string_view name) const {
  const auto it = tensors_.find(name);
  return it == tensors_.end() ? nullptr : &it->second;
}

const Tensor& TensorSet::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) fail(ErrorCode::manifest, "missing tensor '" + std::string(name) + "'");
  return *t;
}

std::vector<std::uint8_t> encode(const TensorSet& tensors) {
  std::uint64_t index_size = 0;
  for (const auto& [name, t] : tensors.entries()) {
    index_size += 2 + name.size() + 1 + 8 * t.dims.size() + 8;
  }
  if (index_size > std::numeric_limits<std::uint32_t>::max() ||
      tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::data, "dump index too large");
  }

  std::vector<std::uint8_t> index;
  index.reserve(index_size);
  std::vector<std::uint8_t> data;
  std::uint64_t offset = kHeaderSize + index_size;
  for (const auto& [name, t] : tensors.entries()) {
    put<std::uint16_t>(index, static_cast<std::uint16_t>(name.size()));
    index.insert(index.end(), name.begin(), name.end());
    put<std::uint8_t>(index, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put<std::uint64_t>(index, d);
    put<std::uint64_t>(index, offset);
    for (float f : t.values) put_float(data, f);
    offset += 4 * t.values.size();
  }

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + index.size() + data.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint16_t>(out, kVersion);
  put<std::uint8_t>(out, kDtypeF32);
  put<std::uint8_t>(out, kLittleEndian);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(index.size()));
  put<std::uint32_t>(out, crc(index));
  put<std::uint32_t>(out, crc(data));
  out.insert(out.end(), index.begin(), index.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

TensorSet decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic) fail(ErrorCode::truncated, "file shorter than the magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorCode::bad_magic, "not an AAUD file");
  }
  if (bytes.size() < kHeaderSize) fail(ErrorCode::truncated, "file shorter than the header");
  const auto version = get<std::uint16_t>(bytes, 4);
  if (version == 0 || version > kVersion) {
    fail(ErrorCode::bad_version, "unsupported AAUD version " + std::to_string(version));
  }
  if (bytes[6] != kDtypeF32) fail(ErrorCode::malformed, "unsupported dtype code");
  if (bytes[7] != kLittleEndian) fail(ErrorCode::malformed, "unsupported byte order");
  const auto count = get<std::uint32_t>(bytes, 8);
  const auto index_size = get<std::uint32_t>(bytes, 12);
  const auto index_crc = get<std::uint32_t>(bytes, 16);
  const auto data_crc = get<std::uint32_t>(bytes, 20);

  const std::uint64_t data_start = kHeaderSize + std::uint64_t{index_size};
  if (data_start > bytes.size()) fail(ErrorCode::truncated, "index extends past end of file");
  const auto index = bytes.subspan(kHeaderSize, index_size);
  if (crc(index) != index_crc) fail(ErrorCode::checksum, "index checksum mismatch");

  struct Entry {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::uint64_t offset;
    std::uint64_t count;
  };
  std::vector<Entry> entries;
  entries.reserve(std::min<std::uint64_t>(count, index_size));
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (index.size() - pos < n) fail(ErrorCode::malformed, "index entry overruns the index");
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    need(2);
    const auto len = get<std::uint16_t>(index, pos);
    pos += 2;
    if (len == 0) fail(ErrorCode::malformed, "empty tensor name");
    need(len);
    e.name.assign(reinterpret_cast<const char*>(index.data() + pos), len);
    pos += len;
    need(1);
    const std::size_t rank = index[pos++];
    if (rank > kMaxRank) fail(ErrorCode::malformed, "tensor rank above " + std::to_string(kMaxRank));
    need(8 * rank + 8);
    for (std::size_t r = 0; r < rank; ++r, pos += 8) e.dims.push_back(get<std::uint64_t>(index, pos));
    e.offset = get<std::uint64_t>(index, pos);
    pos += 8;
    const auto n = checked_count(e.dims);
    if (!n) fail(ErrorCode::malformed, "tensor '" + e.name + "' size overflows");
    e.count = *n;
    entries.push_back(std::move(e));
  }
  if (pos != index.size()) fail(ErrorCode::malformed, "trailing bytes in index");

  for (const auto& e : entries) {
    if (e.offset < data_start) {
      fail(ErrorCode::malformed, "tensor '" + e.name + "' starts inside the header or index");
    }
    if (e.offset > bytes.size() || 4 * e.count > bytes.size() - e.offset) {
      fail(ErrorCode::truncated, "tensor '" + e.name + "' extends past end of file");
    }
  }
  if (crc(bytes.subspan(data_start)) != data_crc) fail(ErrorCode::checksum, "data checksum mismatch");

  std::vector<const Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    const Entry& prev = *by_offset[i - 1];
    if (prev.offset + 4 * prev.count > by_offset[i]->offset) {
      fail(ErrorCode::malformed, "tensors '" + prev.name + "' and '" + by_offset[i]->name + "' overlap");
    }
  }
  std::set<std::string_view> names;
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) fail(ErrorCode::duplicate, "duplicate tensor name '" + e.name + "'");
  }

  TensorSet out;
  for (auto& e : entries) {
    Tensor t;
    t.dims = std::move(e.dims);
    t.values.resize(e.count);
    for (std::uint64_t k = 0; k < e.count; ++k) {
      const auto bits = get<std::uint32_t>(bytes, e.offset + 4 * k);
      std::memcpy(&t.values[k], &bits, sizeof bits);
    }
    out.add(std::move(e.name), std::move(t));
  }
  return out;
}

void write_dump(const TensorSet& tensors, const std::filesystem::path& path) {
  const auto bytes = encode(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  f.close();
  if (!f) fail(ErrorCode::io, "failed writing '" + path.string() + "'");
}

TensorSet read_dump(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) fail(ErrorCode::io, "failed reading '" + path.string() + "'");
  return decode(bytes);
}

}  // namespace aaud::dump

namespace aaud {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) { fail(ErrorCode::manifest, "manifest: " + what); }

const json& field(const json& obj, const char* key) {
  if (!obj.is_object()) bad(std::string("expected an object holding '") + key + "'");
  const auto it = obj.find(key);
  if (it == obj.end()) bad(std::string("missing field '") + key + "'");
  return *it;
}

std::string string_field(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_string() || v.get_ref<const std::string&>().empty()) {
    bad(std::string("field '") + key + "' must be a non-empty string");
  }
  return v.get<std::string>();
}

std::size_t count_field(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) {
    bad(std::string("field '") + key + "' must be a positive integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

std::vector<TokenId> ExperimentManifest::answer_token_ids() const {
  std::vector<TokenId> ids;
  ids.reserve(answers.size());
  for (const auto& a : answers) ids.push_back(a.token_id);
  return ids;
}

TokenId ExperimentManifest::token_for(std::string_view label) const {
  for (const auto& a : answers) {
    if (a.label == label) return a.token_id;
  }
  bad("unknown answer label '" + std::string(label) + "'");
}

ExperimentManifest parse_manifest(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  ExperimentManifest m;
  const json& ver = field(j, "schema_version");
  if (!ver.is_number_integer()) bad("schema_version must be an integer");
  m.schema_version = ver.get<int>();
  if (m.schema_version < 1 || m.schema_version > kManifestSchemaVersion) {
    bad("unsupported schema_version " + std::to_string(m.schema_version));
  }
  m.model_label = string_field(j, "model_label");
  m.hidden_dim = count_field(j, "hidden_dim");
  m.num_layers = count_field(j, "num_layers");
  m.vocab_size = count_field(j, "vocab_size");

  const json& un = field(j, "unembedding");
  m.unembedding_rows = string_field(un, "rows");
  m.unembedding_gamma = string_field(un, "gamma");
  if (un.contains("biases") && !un.at("biases").is_null()) {
    m.unembedding_biases = string_field(un, "biases");
  }

  const json& answers = field(j, "answers");
  if (!answers.is_array() || answers.empty()) bad("answers must be a non-empty array");
  std::set<std::string> labels;
  std::set<TokenId> ids;
  for (const json& a : answers) {
    ManifestAnswer ans;
    ans.label = string_field(a, "label");
    const json& id = field(a, "token_id");
    if (!id.is_number_unsigned()) bad("answer '" + ans.label + "' token_id must be a nonnegative integer");
    ans.token_id = id.get<TokenId>();
    if (ans.token_id >= m.vocab_size) bad("answer '" + ans.label + "' token_id out of vocabulary");
    if (!labels.insert(ans.label).second) bad("duplicate answer label '" + ans.label + "'");
    if (!ids.insert(ans.token_id).second) {
      bad("answer labels map to the same token id " + std::to_string(ans.token_id));
    }
    m.answers.push_back(std::move(ans));
  }

  const json& instances = field(j, "instances");
  if (!instances.is_array()) bad("instances must be an array");
  if (instances.empty()) bad("instance list is empty");
  std::set<std::string> seen;
  for (const json& in : instances) {
    ManifestInstance inst;
    inst.instance_id = string_field(in, "instance_id");
    if (!seen.insert(inst.instance_id).second) bad("duplicate instance_id '" + inst.instance_id + "'");
    inst.sensor_answer = string_field(in, "sensor_answer");
    inst.user_answer = string_field(in, "user_answer");
    if (!labels.count(inst.sensor_answer) || !labels.count(inst.user_answer)) {
      bad("instance '" + inst.instance_id + "' names an unknown answer label");
    }
    if (inst.sensor_answer == inst.user_answer) {
      bad("instance '" + inst.instance_id + "' has identical sensor and user answers");
    }
    const json& tensors = field(in, "tensors");
    if (!tensors.is_object()) bad("instance '" + inst.instance_id + "' tensors must be an object");
    for (const auto& [key, value] : tensors.items()) {
      if (!parse_condition(key)) bad("instance '" + inst.instance_id + "' has unknown condition '" + key + "'");
    }
    for (Condition c : kConditions) {
      const std::string key(to_string(c));
      if (!tensors.contains(key)) {
        bad("instance '" + inst.instance_id + "' lacks condition '" + key + "'");
      }
      const json& v = tensors.at(key);
      if (v.is_string() && !v.get_ref<const std::string&>().empty()) {
        inst.tensors[index_of(c)] = v.get<std::string>();
      } else if (v.is_array()) {
        if (v.size() != m.num_layers) {
          bad("instance '" + inst.instance_id + "' condition '" + key + "' lists " +
              std::to_string(v.size()) + " layers, expected " + std::to_string(m.num_layers));
        }
        std::vector<std::string> names;
        for (const json& n : v) {
          if (!n.is_string() || n.get_ref<const std::string&>().empty()) {
            bad("instance '" + inst.instance_id + "' layer tensor names must be non-empty strings");
          }
          names.push_back(n.get<std::string>());
        }
        inst.tensors[index_of(c)] = std::move(names);
      } else {
        bad("instance '" + inst.instance_id + "' condition '" + key +
            "' must be a tensor name or a list of names");
      }
    }
    m.instances.push_back(std::move(inst));
  }
  return m;
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::io, "cannot open manifest '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) fail(ErrorCode::io, "failed reading manifest '" + path.string() + "'");
  return parse_manifest(text);
}

std::string manifest_to_json(const ExperimentManifest& m) {
  nlohmann::ordered_json j;
  j["schema_version"] = m.schema_version;
  j["model_label"] = m.model_label;
  j["hidden_dim"] = m.hidden_dim;
  j["num_layers"] = m.num_layers;
  j["vocab_size"] = m.vocab_size;
  j["unembedding"]["rows"] = m.unembedding_rows;
  j["unembedding"]["gamma"] = m.unembedding_gamma;
  if (m.unembedding_biases) j["unembedding"]["biases"] = *m.unembedding_biases;
  j["answers"] = nlohmann::ordered_json::array();
  for (const auto& a : m.answers) j["answers"].push_back({{"label", a.label}, {"token_id", a.token_id}});
  j["instances"] = nlohmann::ordered_json::array();
  for (const auto& in : m.instances) {
    nlohmann::ordered_json t;
    for (Condition c : kConditions) {
      std::visit([&](const auto& v) { t[std::string(to_string(c))] = v; }, in.tensors[index_of(c)]);
    }
    j["instances"].push_back({{"instance_id", in.instance_id},
                              {"sensor_answer", in.sensor_answer},
                              {"user_answer", in.user_answer},
                              {"tensors", std::move(t)}});
  }
  return j.dump(2) + "\n";
}

namespace {

std::string dims_text(const std::vector<std::uint64_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

const dump::Tensor& expect(const dump::TensorSet& tensors, const std::string& name,
                           const std::string& context) {
  const dump::Tensor* t = tensors.find(name);
  if (!t) fail(ErrorCode::manifest, "manifest: missing tensor '" + name + "' (" + context + ")");
  return *t;
}

void expect_dims(const dump::Tensor& t, std::vector<std::uint64_t> want, const std::string& name) {
  if (t.dims != want) {
    fail(ErrorCode::shape, "tensor '" + name + "' has shape " + dims_text(t.dims) + ", expected " +
                               dims_text(want));
  }
}

// Rows of one condition: L x d for a full trace, 1 x d for a final state.
Matrix condition_states(const ExperimentManifest& m, const ManifestInstance& in, Condition c,
                        const dump::TensorSet& tensors) {
  const std::string context = "instance " + in.instance_id + ", " + std::string(to_string(c));
  const std::uint64_t d = m.hidden_dim;
  const std::uint64_t l = m.num_layers;
  const auto& spec = in.tensors[index_of(c)];
  if (const auto* name = std::get_if<std::string>(&spec)) {
    const dump::Tensor& t = expect(tensors, *name, context);
    if (t.dims.size() == 1) {
      expect_dims(t, {d}, *name);
    } else {
      expect_dims(t, {l, d}, *name);
    }
    const std::size_t rows = t.dims.size() == 1 ? 1 : l;
    return Matrix(rows, d, std::vector<double>(t.values.begin(), t.values.end()));
  }
  const auto& names = std::get<std::vector<std::string>>(spec);
  Matrix out(names.size(), d);
  for (std::size_t layer = 0; layer < names.size(); ++layer) {
    const dump::Tensor& t = expect(tensors, names[layer], context);
    expect_dims(t, {d}, names[layer]);
    std::copy(t.values.begin(), t.values.end(), out.row(layer).begin());
  }
  return out;
}

}  // namespace

void validate_manifest(const ExperimentManifest& m, const dump::TensorSet& tensors) {
  const std::uint64_t d = m.hidden_dim;
  const std::uint64_t v = m.vocab_size;
  expect_dims(expect(tensors, m.unembedding_rows, "unembedding rows"), {v, d}, m.unembedding_rows);
  expect_dims(expect(tensors, m.unembedding_gamma, "unembedding gamma"), {d}, m.unembedding_gamma);
  if (m.unembedding_biases) {
    expect_dims(expect(tensors, *m.unembedding_biases, "unembedding biases"), {v},
                *m.unembedding_biases);
  }
  for (const auto& in : m.instances) {
    for (Condition c : kConditions) condition_states(m, in, c, tensors);
  }
}

AssembledSuite assemble_records(const ExperimentManifest& m, const dump::TensorSet& tensors) {
  validate_manifest(m, tensors);
  const std::size_t d = m.hidden_dim;
  const std::size_t v = m.vocab_size;
  AssembledSuite out;
  {
    const auto& rows = tensors.at(m.unembedding_rows).values;
    const auto& gamma = tensors.at(m.unembedding_gamma).values;
    Vector biases(v, 0.0);
    if (m.unembedding_biases) {
      const auto& b = tensors.at(*m.unembedding_biases).values;
      biases.assign(b.begin(), b.end());
    }
    out.unembedding = build_effective_unembedding(
        Matrix(v, d, std::vector<double>(rows.begin(), rows.end())),
        Vector(gamma.begin(), gamma.end()), biases);
  }
  out.answer_token_ids = m.answer_token_ids();

  struct Built {
    ConflictRecord record;
    TraceSet traces;
  };
  auto built = parallel::map<Built>(m.instances.size(), [&](std::size_t i) {
    const ManifestInstance& in = m.instances[i];
    Built b;
    b.traces.instance_id = in.instance_id;
    b.traces.sensor_answer = m.token_for(in.sensor_answer);
    b.traces.user_answer = m.token_for(in.user_answer);
    std::array<Vector, 4> finals;
    for (Condition c : kConditions) {
      Matrix states = condition_states(m, in, c, tensors);
      const auto last = states.row(states.rows() - 1);
      finals[index_of(c)].assign(last.begin(), last.end());
      b.traces.traces[index_of(c)] = LayerTrace{in.instance_id, c, std::move(states)};
    }
    b.record = make_conflict_record(in.instance_id, std::move(finals), b.traces.sensor_answer,
                                    b.traces.user_answer, out.unembedding, out.answer_token_ids);
    return b;
  });

  out.full_traces = true;
  for (auto& b : built) {
    for (Condition c : kConditions) {
      if (b.traces.get(c).num_layers() != m.num_layers) out.full_traces = false;
    }
    out.records.push_back(std::move(b.record));
    out.traces.push_back(std::move(b.traces));
  }
  return out;
}

}  // namespace aaud
