#include "genrelens/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "genrelens/errors.hpp"

namespace genrelens::nn {

using nlohmann::json;

void save_tensors(const std::vector<NamedTensor>& tensors,
                  const std::string& prefix, const json& extra) {
  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["dtype"] = "f64";
  manifest["byte_order"] = "little";
  manifest["extra"] = extra;
  json entries = json::array();

  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw DataError("cannot open " + prefix + ".bin for writing");
  std::size_t offset = 0;
  for (const auto& nt : tensors) {
    json e;
    e["name"] = nt.name;
    e["shape"] = nt.tensor.shape();
    e["offset"] = offset;
    e["count"] = nt.tensor.size();
    entries.push_back(e);
    blob.write(reinterpret_cast<const char*>(nt.tensor.data()),
               std::streamsize(nt.tensor.size() * sizeof(double)));
    offset += nt.tensor.size() * sizeof(double);
  }
  manifest["tensors"] = entries;

  std::ofstream mf(prefix + ".json");
  if (!mf) throw DataError("cannot open " + prefix + ".json for writing");
  mf << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_tensors(const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw DataError("missing manifest " + prefix + ".json");
  json manifest = json::parse(mf);
  if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw DataError("unsupported checkpoint format version");
  if (manifest.at("dtype").get<std::string>() != "f64")
    throw DataError("unsupported checkpoint dtype");

  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw DataError("missing blob " + prefix + ".bin");

  LoadedCheckpoint out;
  out.extra = manifest.value("extra", json::object());
  for (const auto& e : manifest.at("tensors")) {
    std::vector<std::size_t> shape = e.at("shape").get<std::vector<std::size_t>>();
    std::size_t count = e.at("count").get<std::size_t>();
    if (Tensor::count(shape) != count)
      throw DataError("checkpoint entry shape/count mismatch for " +
                      e.at("name").get<std::string>());
    Tensor t(shape);
    blob.seekg(std::streamoff(e.at("offset").get<std::size_t>()));
    blob.read(reinterpret_cast<char*>(t.data()),
              std::streamsize(count * sizeof(double)));
    if (!blob) throw DataError("truncated checkpoint blob at " +
                               e.at("name").get<std::string>());
    out.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
  }
  return out;
}

void save_parameters(const ParameterStore& store, const std::string& prefix,
                     const json& extra) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(store.all().size());
  for (const auto& p : store.all()) tensors.push_back({p.name, p.value()});
  save_tensors(tensors, prefix, extra);
}

json load_parameters(ParameterStore& store, const std::string& prefix) {
  LoadedCheckpoint ck = load_tensors(prefix);
  for (auto& nt : ck.tensors) {
    Parameter* p = store.find(nt.name);
    if (!p) throw DataError("checkpoint parameter not in model: " + nt.name);
    if (!p->value().same_shape(nt.tensor))
      throw DataError("checkpoint shape mismatch for " + nt.name + ": " +
                      nt.tensor.shape_str() + " vs " + p->value().shape_str());
    p->value() = std::move(nt.tensor);
  }
  return ck.extra;
}

}  // namespace genrelens::nn
