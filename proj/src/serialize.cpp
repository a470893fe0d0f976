#include "sembridge/serialize.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are written as little-endian float32");

namespace sembridge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_blob(const std::string &path, const std::vector<float> &data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char *>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<float> read_blob(const std::string &path, size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<float> data(count);
  in.read(reinterpret_cast<char *>(data.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != count * sizeof(float))
    throw std::runtime_error("short read: " + path);
  return data;
}

json load_json(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return json::parse(in);
}

void store_json(const std::string &path, const json &j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

void write_tensor_file(const std::string &bin_path, const std::string &manifest_path,
                       const std::vector<const TensorT<float> *> &tensors) {
  std::vector<float> all;
  json records = json::array();
  int64_t offset = 0;
  for (const TensorT<float> *t : tensors) {
    records.push_back({{"rows", t->rows}, {"cols", t->cols}, {"offset", offset}});
    all.insert(all.end(), t->data.begin(), t->data.end());
    offset += t->numel();
  }
  write_blob(bin_path, all);
  store_json(manifest_path, json{{"dtype", "float32"}, {"byte_order", "little"},
                                 {"records", records}});
}

std::vector<TensorT<float>> read_tensor_file(const std::string &bin_path,
                                             const std::string &manifest_path) {
  json manifest = load_json(manifest_path);
  if (manifest.value("dtype", "") != "float32")
    throw std::runtime_error("unsupported tensor dtype in " + manifest_path);
  size_t total = 0;
  for (const auto &r : manifest.at("records"))
    total += static_cast<size_t>(r.at("rows").get<int64_t>() * r.at("cols").get<int64_t>());
  std::vector<float> all = read_blob(bin_path, total);

  std::vector<TensorT<float>> out;
  for (const auto &r : manifest.at("records")) {
    int64_t rows = r.at("rows").get<int64_t>();
    int64_t cols = r.at("cols").get<int64_t>();
    int64_t off = r.at("offset").get<int64_t>();
    TensorT<float> t(rows, cols);
    std::copy(all.begin() + off, all.begin() + off + rows * cols, t.data.begin());
    out.push_back(std::move(t));
  }
  return out;
}

const CheckpointEntry *Checkpoint::find(const std::string &name) const {
  for (const auto &e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::string &dir, const Checkpoint &ckpt) {
  fs::create_directories(fs::path(dir) / "params");
  json params = json::array();
  for (size_t i = 0; i < ckpt.entries.size(); ++i) {
    const CheckpointEntry &e = ckpt.entries[i];
    std::string file = "params/" + std::to_string(i) + ".bin";
    params.push_back({{"name", e.name},
                      {"rows", e.value.rows},
                      {"cols", e.value.cols},
                      {"frozen", e.frozen},
                      {"role", e.role},
                      {"exported", e.exported},
                      {"file", file}});
    write_blob((fs::path(dir) / file).string(), e.value.data);
  }
  json manifest{{"params", params}};
  if (!ckpt.meta_json.empty()) manifest["meta"] = json::parse(ckpt.meta_json);
  store_json((fs::path(dir) / "manifest.json").string(), manifest);
}

Checkpoint load_checkpoint(const std::string &dir) {
  json manifest = load_json((fs::path(dir) / "manifest.json").string());
  Checkpoint ckpt;
  if (manifest.contains("meta")) ckpt.meta_json = manifest["meta"].dump();
  for (const auto &p : manifest.at("params")) {
    CheckpointEntry e;
    e.name = p.at("name").get<std::string>();
    int64_t rows = p.at("rows").get<int64_t>();
    int64_t cols = p.at("cols").get<int64_t>();
    e.frozen = p.at("frozen").get<bool>();
    e.role = p.value("role", "");
    e.exported = p.value("exported", true);
    e.value = TensorT<float>(rows, cols,
                             read_blob((fs::path(dir) / p.at("file").get<std::string>()).string(),
                                       static_cast<size_t>(rows * cols)));
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

Checkpoint snapshot_params(const std::vector<ParameterT<float> *> &params,
                           const std::string &role) {
  Checkpoint ckpt;
  for (ParameterT<float> *p : params)
    ckpt.entries.push_back(CheckpointEntry{p->name, p->value, p->frozen, role, true});
  return ckpt;
}

size_t restore_params(const Checkpoint &ckpt, const std::vector<ParameterT<float> *> &params) {
  size_t restored = 0;
  for (ParameterT<float> *p : params) {
    const CheckpointEntry *e = ckpt.find(p->name);
    if (e == nullptr) continue;
    if (e->value.rows != p->value.rows || e->value.cols != p->value.cols)
      throw std::runtime_error("checkpoint shape mismatch for " + p->name);
    p->value = e->value;
    p->frozen = e->frozen;
    ++restored;
  }
  return restored;
}

uint64_t file_content_hash(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for hashing: " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
    if (in.eof()) break;
  }
  return h;
}

uint64_t checkpoint_hash(const Checkpoint &ckpt) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto &e : ckpt.entries) {
    h = fnv1a(e.name.data(), e.name.size(), h);
    h = fnv1a(e.value.data.data(), e.value.data.size() * sizeof(float), h);
    h = fnv1a(&e.frozen, sizeof(e.frozen), h);
  }
  return h;
}

}  // namespace sembridge
