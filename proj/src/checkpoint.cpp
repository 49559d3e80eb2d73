#include "patchlm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace patchlm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'P', 'L', 'M', 'C'};

template <class V>
void put(std::ostream& out, V value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <class V>
V get(std::istream& in) {
  V value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(V))) {
    throw FormatError("checkpoint truncated");
  }
  return value;
}

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw FormatError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

bool has_aux_prefix(const std::string& name) { return name.rfind(kAuxPrefix, 0) == 0; }

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(),
                         [&](const CheckpointTensor& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

bool Checkpoint::has_aux() const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [](const CheckpointTensor& t) { return has_aux_prefix(t.name); });
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto& m = ckpt.model;
  put(out, narrow(m.vocab_size, "vocab_size"));
  put(out, narrow(m.hidden_size, "hidden_size"));
  put(out, narrow(m.intermediate_size, "intermediate_size"));
  put(out, narrow(m.n_layers, "n_layers"));
  put(out, narrow(m.n_heads, "n_heads"));
  put(out, narrow(m.max_context, "max_context"));
  put<double>(out, m.rope_base);
  put<double>(out, m.rms_eps);
  const auto& p = ckpt.patch;
  put(out, narrow(p.patch_size, "patch_size"));
  put<double>(out, p.lambda);
  put(out, narrow(p.context_tokens, "context_tokens"));
  put<std::uint8_t>(out, p.context_mode == ContextMode::full ? 0 : 1);
  put<std::uint8_t>(out, p.strategy == PatchStrategy::consecutive ? 0 : 1);
  put<std::uint8_t>(out, p.input_proj ? 1 : 0);
  put<std::uint8_t>(out, p.output_proj ? 1 : 0);
  put(out, narrow(ckpt.tensors.size(), "tensor count"));
  for (const auto& t : ckpt.tensors) {
    if (numel(t.shape) != t.data.size()) throw ShapeError("checkpoint tensor '" + t.name + "' size mismatch");
    put(out, narrow(t.name.size(), "name length"));
    out.write(t.name.data(), std::streamsize(t.name.size()));
    put(out, narrow(t.shape.size(), "rank"));
    for (auto d : t.shape) put(out, narrow(d, "dimension"));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              std::streamsize(t.data.size() * sizeof(float)));
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
}

std::string checkpoint_bytes(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, ckpt);
  return out.str();
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  auto& m = ckpt.model;
  m.vocab_size = get<std::uint32_t>(in);
  m.hidden_size = get<std::uint32_t>(in);
  m.intermediate_size = get<std::uint32_t>(in);
  m.n_layers = get<std::uint32_t>(in);
  m.n_heads = get<std::uint32_t>(in);
  m.max_context = get<std::uint32_t>(in);
  m.rope_base = get<double>(in);
  m.rms_eps = get<double>(in);
  auto& p = ckpt.patch;
  p.patch_size = get<std::uint32_t>(in);
  p.lambda = get<double>(in);
  p.context_tokens = get<std::uint32_t>(in);
  p.context_mode = get<std::uint8_t>(in) == 0 ? ContextMode::full : ContextMode::reduced;
  p.strategy = get<std::uint8_t>(in) == 0 ? PatchStrategy::consecutive : PatchStrategy::mixup;
  p.input_proj = get<std::uint8_t>(in) != 0;
  p.output_proj = get<std::uint8_t>(in) != 0;
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = get<std::uint32_t>(in);
    if (name_len > 4096) throw FormatError("implausible tensor name length");
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) throw FormatError("checkpoint truncated");
    const auto rank = get<std::uint32_t>(in);
    if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank for '" + t.name + "'");
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(get<std::uint32_t>(in));
    t.data.resize(numel(t.shape));
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 std::streamsize(t.data.size() * sizeof(float)))) {
      throw FormatError("checkpoint truncated in tensor '" + t.name + "'");
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

namespace {

template <class T>
CheckpointTensor to_record(const std::string& name, const Tensor<T>& t) {
  CheckpointTensor rec{name, t.shape(), {}};
  rec.data.reserve(t.size());
  for (T v : t.data()) rec.data.push_back(static_cast<float>(v));
  return rec;
}

template <class T>
TensorPtr<T> from_record(const CheckpointTensor& rec) {
  std::vector<T> data(rec.data.begin(), rec.data.end());
  return make_tensor<T>(rec.shape, std::move(data), true);
}

}  // namespace

template <class T>
Checkpoint make_checkpoint(const TransformerParams<T>& params, const AuxProjections<T>& aux,
                           const PatchConfig& patch) {
  Checkpoint ckpt{params.config, patch, {}};
  for (const auto& [name, t] : params.named()) ckpt.tensors.push_back(to_record(name, *t));
  for (const auto& [name, t] : aux.named()) ckpt.tensors.push_back(to_record(name, *t));
  return ckpt;
}

template <class T>
TransformerParams<T> load_params(const Checkpoint& ckpt) {
  std::vector<NamedTensor<T>> tensors;
  for (const auto& rec : ckpt.tensors) {
    if (!has_aux_prefix(rec.name)) tensors.emplace_back(rec.name, from_record<T>(rec));
  }
  const std::uint64_t expected = param_count(ckpt.model);
  std::uint64_t found = 0;
  for (const auto& [name, t] : tensors) found += t->size();
  if (found != expected) {
    throw FormatError("checkpoint holds " + std::to_string(found) + " backbone values, expected " +
                      std::to_string(expected));
  }
  return params_from_named<T>(ckpt.model, tensors);
}

template <class T>
AuxProjections<T> load_aux(const Checkpoint& ckpt) {
  AuxProjections<T> aux;
  if (auto* w = ckpt.find(std::string(kAuxPrefix) + "w_in")) aux.w_in = from_record<T>(*w);
  if (auto* w = ckpt.find(std::string(kAuxPrefix) + "w_out")) aux.w_out = from_record<T>(*w);
  return aux;
}

Checkpoint strip_aux(Checkpoint ckpt) {
  std::erase_if(ckpt.tensors, [](const CheckpointTensor& t) { return has_aux_prefix(t.name); });
  ckpt.patch.input_proj = false;
  ckpt.patch.output_proj = false;
  return ckpt;
}

template Checkpoint make_checkpoint<float>(const TransformerParams<float>&,
                                           const AuxProjections<float>&, const PatchConfig&);
template Checkpoint make_checkpoint<double>(const TransformerParams<double>&,
                                            const AuxProjections<double>&, const PatchConfig&);
template TransformerParams<float> load_params<float>(const Checkpoint&);
template TransformerParams<double> load_params<double>(const Checkpoint&);
template AuxProjections<float> load_aux<float>(const Checkpoint&);
template AuxProjections<double> load_aux<double>(const Checkpoint&);

}  // namespace patchlm
