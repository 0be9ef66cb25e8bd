#include "rxlora/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "rxlora/error.hpp"

namespace rxlora {
namespace {

constexpr char kMagic[8] = {'R', 'X', 'L', 'O', 'R', 'A', 'C', 'K'};

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  }
  template <class T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw Error(ErrorKind::kIo, "write failure on " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  }
  template <class T>
  T get() {
    T v{};
    bytes(&v, sizeof(T));
    return to_little(v);
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error(ErrorKind::kCheckpointMismatch, "truncated checkpoint " + path_.string());
    }
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

struct Header {
  std::uint32_t content = 0;
  ModelConfig config;
};

Header read_header(Reader& r, const std::filesystem::path& path) {
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorKind::kCheckpointMismatch, path.string() + " is not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kCheckpointMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  Header h;
  h.content = r.get<std::uint32_t>();
  h.config.vocab_size = r.get<std::uint64_t>();
  h.config.d_model = r.get<std::uint64_t>();
  h.config.n_layers = r.get<std::uint64_t>();
  h.config.n_heads = r.get<std::uint64_t>();
  h.config.d_ff = r.get<std::uint64_t>();
  h.config.max_seq_len = r.get<std::uint64_t>();
  h.config.lora_rank = r.get<std::uint64_t>();
  h.config.lora_alpha = r.get<float>();
  return h;
}

std::map<std::string, ad::Tensor> read_tensors(Reader& r) {
  std::map<std::string, ad::Tensor> out;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.bytes(name.data(), name.size());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw Error(ErrorKind::kCheckpointMismatch, "tensor '" + name + "' has implausible rank");
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<float> data(ad::shape_size(shape));
    for (auto& x : data) x = r.get<float>();
    out.emplace(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void assign(ModelParams& params, std::map<std::string, ad::Tensor>& tensors, TensorRole wanted) {
  for_each_tensor(params, [&](const std::string& name, ad::Tensor& t, TensorRole role) {
    if (role != wanted) return;
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorKind::kCheckpointMismatch, "checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw Error(ErrorKind::kCheckpointMismatch, "tensor '" + name + "' has a different shape");
    }
    const bool trainable = t.requires_grad();
    t = std::move(it->second);
    t.set_requires_grad(trainable);
    tensors.erase(it);
  });
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path, CheckpointContent content) {
  const auto flags = static_cast<std::uint32_t>(content);
  const bool want_base = flags & static_cast<std::uint32_t>(CheckpointContent::kBase);
  bool want_adapters = flags & static_cast<std::uint32_t>(CheckpointContent::kAdapters);
  if (want_adapters && !params.has_adapters()) {
    if (!want_base) throw Error(ErrorKind::kCheckpointMismatch, "model has no adapters to save");
    want_adapters = false;
  }
  std::uint32_t stored = 0;
  if (want_base) stored |= static_cast<std::uint32_t>(CheckpointContent::kBase);
  if (want_adapters) stored |= static_cast<std::uint32_t>(CheckpointContent::kAdapters);

  std::vector<std::pair<std::string, const ad::Tensor*>> selected;
  for_each_tensor(params, [&](const std::string& name, const ad::Tensor& t, TensorRole role) {
    if ((role == TensorRole::kBase && want_base) || (role == TensorRole::kAdapter && want_adapters)) {
      selected.emplace_back(name, &t);
    }
  });

  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(stored);
  const auto& c = params.config;
  for (std::size_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len, c.lora_rank}) {
    w.put<std::uint64_t>(v);
  }
  w.put<float>(c.lora_alpha);
  w.put<std::uint64_t>(selected.size());
  for (const auto& [name, t] : selected) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) w.put<std::uint64_t>(d);
    for (float x : t->data()) w.put<float>(x);
  }
  w.finish();
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r, path).config;
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r, path);
  if (!(h.content & static_cast<std::uint32_t>(CheckpointContent::kBase))) {
    throw Error(ErrorKind::kCheckpointMismatch, path.string() + " holds adapters only");
  }
  auto tensors = read_tensors(r);
  ModelParams params = init(h.config, 0);
  const bool with_adapters = h.content & static_cast<std::uint32_t>(CheckpointContent::kAdapters);
  if (!with_adapters) {
    params = merge_adapters(params);  // drops the placeholder adapters (zero up => unchanged base)
  }
  assign(params, tensors, TensorRole::kBase);
  if (with_adapters) assign(params, tensors, TensorRole::kAdapter);
  if (!tensors.empty()) {
    throw Error(ErrorKind::kCheckpointMismatch, "unexpected tensor '" + tensors.begin()->first + "'");
  }
  return params;
}

void load_adapters(ModelParams& params, const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r, path);
  if (!(h.content & static_cast<std::uint32_t>(CheckpointContent::kAdapters))) {
    throw Error(ErrorKind::kCheckpointMismatch, path.string() + " holds no adapters");
  }
  if (!(h.config == params.config)) {
    throw Error(ErrorKind::kCheckpointMismatch, "adapter checkpoint config differs from the base model");
  }
  auto tensors = read_tensors(r);
  for (auto it = tensors.begin(); it != tensors.end();) {
    it = (it->first.find(".lora_") == std::string::npos) ? tensors.erase(it) : std::next(it);
  }
  if (!params.has_adapters()) attach_adapters(params, 0);
  assign(params, tensors, TensorRole::kAdapter);
  if (!tensors.empty()) {
    throw Error(ErrorKind::kCheckpointMismatch, "unexpected tensor '" + tensors.begin()->first + "'");
  }
}

}  // namespace rxlora
