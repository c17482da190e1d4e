#include "imusic/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "imusic/error.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "IMCK I/O assumes a little-endian host");

namespace imusic::ckpt {
namespace {

constexpr std::array<char, 4> kMagic{'I', 'M', 'C', 'K'};
constexpr std::uint8_t kDtypeF32 = 0;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw DataError("checkpoint " + path_.string() + ": truncated while reading " + what + " (offset " +
                      std::to_string(pos_) + ", file size " + std::to_string(bytes_.size()) + ")");
    }
  }

  const std::string& bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Parsed {
  Inspection info;
  std::size_t payload_start = 0;
};

Parsed parse(const std::string& bytes, const std::filesystem::path& path) {
  Reader r(bytes, path);
  Parsed p;
  const std::string magic = r.str(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw DataError("checkpoint " + path.string() + ": bad magic (not an IMCK file)");
  }
  p.info.version = r.get<std::uint32_t>("version");
  if (p.info.version != kVersion) {
    throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(p.info.version) +
                    " (supported: " + std::to_string(kVersion) + ")");
  }
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  p.info.metadata = r.str(meta_len, "metadata");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TableEntry e;
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    e.name = r.str(name_len, "tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) {
      throw DataError("checkpoint " + path.string() + ": tensor " + e.name + " has unsupported dtype " +
                      std::to_string(dtype));
    }
    const auto rank = r.get<std::uint8_t>("rank");
    std::uint64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const auto extent = r.get<std::uint32_t>("extent");
      if (extent == 0 || extent > 0x7fffffffu) throw DataError("checkpoint " + path.string() + ": bad extent in " + e.name);
      e.shape.push_back(static_cast<int>(extent));
      numel *= extent;
    }
    e.offset = r.get<std::uint64_t>("tensor offset");
    e.bytes = r.get<std::uint64_t>("tensor length");
    if (e.bytes != numel * sizeof(float)) {
      throw DataError("checkpoint " + path.string() + ": tensor " + e.name + " length does not match its shape");
    }
    p.info.table.push_back(std::move(e));
  }
  p.info.payload_bytes = r.get<std::uint64_t>("payload length");
  p.payload_start = r.pos();
  if (p.info.payload_bytes > r.size() - p.payload_start) {
    throw DataError("checkpoint " + path.string() + ": truncated payload (" +
                    std::to_string(r.size() - p.payload_start) + " of " + std::to_string(p.info.payload_bytes) +
                    " bytes)");
  }
  std::vector<const TableEntry*> sorted;
  for (const auto& e : p.info.table) {
    if (e.offset > p.info.payload_bytes || e.bytes > p.info.payload_bytes - e.offset) {
      throw DataError("checkpoint " + path.string() + ": tensor " + e.name + " lies outside the payload");
    }
    sorted.push_back(&e);
  }
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1]->offset + sorted[i - 1]->bytes > sorted[i]->offset) {
      throw DataError("checkpoint " + path.string() + ": tensors " + sorted[i - 1]->name + " and " +
                      sorted[i]->name + " overlap");
    }
  }
  return p;
}

}  // namespace

const NamedTensor* Bundle::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save(const std::filesystem::path& path, const Bundle& bundle) {
  std::string head(kMagic.begin(), kMagic.end());
  put<std::uint32_t>(head, kVersion);
  put<std::uint64_t>(head, bundle.metadata.size());
  head += bundle.metadata;
  put<std::uint32_t>(head, static_cast<std::uint32_t>(bundle.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : bundle.tensors) {
    std::size_t numel = 1;
    for (int e : t.shape) numel *= static_cast<std::size_t>(e);
    if (numel != t.values.size() || t.shape.size() > 255) {
      throw UsageError("checkpoint save: tensor " + t.name + " shape does not match its values");
    }
    put<std::uint32_t>(head, static_cast<std::uint32_t>(t.name.size()));
    head += t.name;
    put<std::uint8_t>(head, kDtypeF32);
    put<std::uint8_t>(head, static_cast<std::uint8_t>(t.shape.size()));
    for (int e : t.shape) put<std::uint32_t>(head, static_cast<std::uint32_t>(e));
    put<std::uint64_t>(head, offset);
    put<std::uint64_t>(head, t.values.size() * sizeof(float));
    offset += t.values.size() * sizeof(float);
  }
  put<std::uint64_t>(head, offset);

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& t : bundle.tensors) {
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

Inspection inspect(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return parse(bytes, path).info;
}

Bundle load(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const Parsed p = parse(bytes, path);
  Bundle b;
  b.metadata = p.info.metadata;
  for (const auto& e : p.info.table) {
    NamedTensor t;
    t.name = e.name;
    t.shape = e.shape;
    t.values.resize(e.bytes / sizeof(float));
    std::memcpy(t.values.data(), bytes.data() + p.payload_start + e.offset, e.bytes);
    b.tensors.push_back(std::move(t));
  }
  return b;
}

std::string describe(const Inspection& info) {
  nlohmann::ordered_json j;
  j["version"] = info.version;
  j["metadata"] = nlohmann::json::parse(info.metadata, nullptr, false);
  if (j["metadata"].is_discarded()) j["metadata"] = info.metadata;
  j["payload_bytes"] = info.payload_bytes;
  j["tensor_count"] = info.table.size();
  auto& table = j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& e : info.table) {
    table.push_back({{"name", e.name}, {"dtype", "f32"}, {"shape", e.shape}, {"offset", e.offset}, {"bytes", e.bytes}});
  }
  return j.dump(2);
}

Bundle from_params(const nn::ParamStore& ps, std::string metadata) {
  Bundle b;
  b.metadata = std::move(metadata);
  for (const auto& [name, t] : ps.named()) {
    b.tensors.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  return b;
}

void to_params(const Bundle& bundle, const nn::ParamStore& ps) {
  std::vector<std::pair<std::string, nc::Tensor>> src;
  for (const auto& t : bundle.tensors) {
    src.emplace_back(t.name, nc::Tensor::from(t.shape, std::vector<nc::real>(t.values.begin(), t.values.end())));
  }
  nn::assign(ps, src);
  if (src.size() != ps.size()) {
    throw DataError("checkpoint has " + std::to_string(src.size()) + " tensors, model expects " +
                    std::to_string(ps.size()));
  }
}

std::filesystem::path adam_sidecar(const std::filesystem::path& model_path) {
  return model_path.string() + ".adam";
}

void save_adam(const std::filesystem::path& path, const nc::Adam& opt) {
  const auto& st = opt.state();
  nlohmann::json meta{{"kind", "adam"}, {"t", st.t}};
  Bundle b;
  b.metadata = meta.dump();
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    const auto& shape = opt.params()[i].shape();
    b.tensors.push_back({"m." + std::to_string(i), shape, std::vector<float>(st.m[i].begin(), st.m[i].end())});
    b.tensors.push_back({"v." + std::to_string(i), shape, std::vector<float>(st.v[i].begin(), st.v[i].end())});
  }
  save(path, b);
}

bool load_adam(const std::filesystem::path& path, nc::Adam& opt) {
  if (!std::filesystem::exists(path)) return false;
  const Bundle b = load(path);
  const auto meta = nlohmann::json::parse(b.metadata, nullptr, false);
  if (meta.is_discarded() || !meta.contains("t")) throw DataError("optimizer state " + path.string() + ": bad metadata");
  auto& st = opt.state();
  const std::size_t n = opt.params().size();
  if (b.tensors.size() != 2 * n) throw DataError("optimizer state " + path.string() + ": parameter count mismatch");
  st.m.assign(n, {});
  st.v.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    const auto* m = b.find("m." + std::to_string(i));
    const auto* v = b.find("v." + std::to_string(i));
    if (!m || !v || m->values.size() != opt.params()[i].numel() || v->values.size() != m->values.size()) {
      throw DataError("optimizer state " + path.string() + ": shape mismatch at parameter " + std::to_string(i));
    }
    st.m[i].assign(m->values.begin(), m->values.end());
    st.v[i].assign(v->values.begin(), v->values.end());
  }
  st.t = meta["t"].get<std::int64_t>();
  return true;
}

}  // namespace imusic::ckpt
