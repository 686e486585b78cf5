#include "ctxtts/checkpoint.hpp"

#include <cstring>
#include <set>

#include "ctxtts/config.hpp"
#include "ctxtts/errors.hpp"
#include "ctxtts/record_io.hpp"

namespace ctxtts::checkpoint {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& what) : b_(bytes), what_(what) {}
  std::uint64_t uint(int width) {
    need(std::size_t(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(b_[at_ + i])) << (8 * i);
    at_ += std::size_t(width);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(at_, n);
    at_ += n;
    return s;
  }
  bool done() const { return at_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - at_ < n) throw CheckpointError(what_ + ": truncated checkpoint");
  }
  const std::string& b_;
  std::string what_;
  std::size_t at_ = 0;
};

}  // namespace

std::string model_config_text(const model::ModelConfig& cfg) {
  auto copy = cfg;
  config::KeyValues kv;
  for (const auto& f : config::model_fields(copy)) kv[f.key] = f.get();
  return config::format_key_values(kv);
}

model::ModelConfig model_config_from_text(const std::string& text) {
  model::ModelConfig cfg;
  const auto kv = config::parse_key_values(text, "checkpoint config");
  auto fields = config::model_fields(cfg);
  std::set<std::string> seen;
  for (auto& f : fields) {
    auto it = kv.find(f.key);
    if (it == kv.end()) throw CheckpointError("checkpoint config lacks " + f.key);
    f.set(it->second);
    seen.insert(f.key);
  }
  for (const auto& [k, v] : kv) {
    if (!seen.count(k)) throw CheckpointError("checkpoint config has unknown key " + k);
  }
  return cfg;
}

std::string encode(const model::AcousticModel<float>& m, std::size_t step) {
  std::string out;
  out.append("CTXK", 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, step);
  const auto text = model_config_text(m.config());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto& ps = m.params().all();
  put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto& p : ps) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &p.value[i], sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

void save(const std::string& path, const model::AcousticModel<float>& m, std::size_t step) {
  io::write_file_atomic(path, encode(m, step));
}

namespace {

std::size_t read_tensors(Reader& r, model::AcousticModel<float>& m, const std::string& what) {
  const auto count = r.uint(4);
  auto& store = m.params();
  if (count != store.all().size()) {
    throw CheckpointError(what + ": holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(store.all().size()));
  }
  std::set<std::string> seen;
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name = r.str(r.uint(4));
    const auto rows = r.uint(4), cols = r.uint(4);
    auto* p = store.find(name);
    if (!p) throw CheckpointError(what + ": unexpected tensor " + name);
    if (!seen.insert(name).second) throw CheckpointError(what + ": duplicate tensor " + name);
    if (p->value.rows() != rows || p->value.cols() != cols) {
      throw CheckpointError(what + ": tensor " + name + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                            ", model expects " + std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(r.uint(4));
      std::memcpy(&p->value[i], &bits, sizeof bits);
    }
  }
  if (!r.done()) throw CheckpointError(what + ": trailing bytes");
  return count;
}

std::pair<model::ModelConfig, std::size_t> read_header(Reader& r, const std::string& what) {
  if (r.str(4) != "CTXK") throw CheckpointError(what + ": not a checkpoint");
  if (r.uint(4) != kCheckpointVersion) throw CheckpointError(what + ": unsupported checkpoint version");
  const auto step = static_cast<std::size_t>(r.uint(8));
  const auto text = r.str(r.uint(4));
  try {
    return {model_config_from_text(text), step};
  } catch (const InvalidConfig& e) {
    throw CheckpointError(what + ": " + e.what());
  }
}

}  // namespace

Loaded decode(const std::string& bytes, const std::string& what) {
  Reader r(bytes, what);
  auto [cfg, step] = read_header(r, what);
  Loaded out;
  out.step = step;
  try {
    out.model = std::make_unique<model::AcousticModel<float>>(cfg);
  } catch (const InvalidConfig& e) {
    throw CheckpointError(what + ": " + e.what());
  }
  read_tensors(r, *out.model, what);
  return out;
}

Loaded load(const std::string& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IngestError&) {
    throw CheckpointError("cannot open checkpoint " + path);
  }
  return decode(bytes, path);
}

void load_into(const std::string& path, model::AcousticModel<float>& m) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IngestError&) {
    throw CheckpointError("cannot open checkpoint " + path);
  }
  Reader r(bytes, path);
  auto [cfg, step] = read_header(r, path);
  (void)step;
  if (model_config_text(cfg) != model_config_text(m.config())) {
    throw CheckpointError(path + ": model configuration differs from the checkpoint");
  }
  read_tensors(r, m, path);
}

}  // namespace ctxtts::checkpoint
