#include "ctxrel/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace ctxrel {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'T', 'X', 'R'};

template <typename T>
void put_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw CheckpointError("checkpoint is truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double v) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  if (n > (1u << 20)) throw CheckpointError("checkpoint string length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (in.gcount() != static_cast<std::streamsize>(n)) throw CheckpointError("checkpoint is truncated");
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.kind()));
  const ModelDims& d = model.dims();
  for (std::size_t v : {d.predicates, d.feature_dim, d.code_dim, d.embedding_dim, d.combos}) {
    put_le<std::uint64_t>(out, v);
  }
  put_f64(out, d.attention_eps);

  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.predicate_names().size()));
  for (const std::string& name : model.predicate_names()) put_string(out, name);

  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.combos().size()));
  for (const auto& c : model.combos().combos) {
    put_string(out, c.subject);
    put_le<std::uint64_t>(out, c.predicate);
    put_string(out, c.object);
  }

  const auto& tensors = model.params().tensors();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.id));
    put_le<std::uint64_t>(out, t.value.size());
    for (double v : t.value) put_f64(out, v);
  }
}

Model load_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4 || magic != kMagic) throw CheckpointError("not a model checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto kind_tag = get_le<std::uint32_t>(in);
  if (kind_tag >= kAllModelKinds.size()) throw CheckpointError("unknown model kind tag in checkpoint");
  const auto kind = static_cast<ModelKind>(kind_tag);

  ModelDims d;
  d.predicates = get_le<std::uint64_t>(in);
  d.feature_dim = get_le<std::uint64_t>(in);
  d.code_dim = get_le<std::uint64_t>(in);
  d.embedding_dim = get_le<std::uint64_t>(in);
  d.combos = get_le<std::uint64_t>(in);
  d.attention_eps = get_f64(in);

  Model model(kind, d);
  const auto names = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < names; ++i) model.predicate_names().push_back(get_string(in));

  const auto combos = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < combos; ++i) {
    ComboTable::Combo c;
    c.subject = get_string(in);
    c.predicate = get_le<std::uint64_t>(in);
    c.object = get_string(in);
    model.combos().combos.push_back(std::move(c));
  }

  auto& tensors = model.params().tensors();
  const auto count = get_le<std::uint32_t>(in);
  if (count != tensors.size()) throw CheckpointError("checkpoint tensor count does not match model kind");
  for (Tensor& t : tensors) {
    const auto id = get_le<std::uint32_t>(in);
    const auto n = get_le<std::uint64_t>(in);
    if (id != static_cast<std::uint32_t>(t.id) || n != t.value.size()) {
      throw CheckpointError("checkpoint tensor '" + std::string(tensor_name(t.id)) + "' has unexpected id or size");
    }
    for (double& v : t.value) v = get_f64(in);
    if (!all_finite(t.value)) throw CheckpointError("checkpoint tensor contains non-finite values");
  }
  return model;
}

void save_checkpoint_file(const std::string& path, const Model& model) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    save_checkpoint(out, model);
    if (!out) throw CheckpointError("failed writing checkpoint: " + path);
  }
  std::filesystem::rename(tmp, path);
}

Model load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  try {
    return load_checkpoint(in);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

}  // namespace ctxrel
