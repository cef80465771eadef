#include "nar/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace nar {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'N', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

static_assert(sizeof(double) == 8, "checkpoint payload assumes 8-byte doubles");

bool host_little_endian() {
  const std::uint16_t probe = 1;
  return *reinterpret_cast<const std::uint8_t*>(&probe) == 1;
}

void write_doubles(std::ofstream& out, const std::vector<double>& data) {
  if (host_little_endian()) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
    return;
  }
  for (double v : data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
  }
}

void read_doubles(std::ifstream& in, std::vector<double>& data) {
  if (host_little_endian()) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    return;
  }
  for (double& v : data) {
    char bytes[8];
    in.read(bytes, 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    std::memcpy(&v, &bits, 8);
  }
}

json histogram_to_json(const BatchHistogram& h) {
  return json{{"lo", h.lo},           {"hi", h.hi},
              {"step", h.step},       {"batch_size", h.batch_size},
              {"count", h.member_count}, {"masses", h.masses}};
}

BatchHistogram histogram_from_json(const json& j) {
  BatchHistogram h;
  h.lo = j.at("lo").get<double>();
  h.hi = j.at("hi").get<double>();
  h.step = j.at("step").get<long long>();
  h.batch_size = j.at("batch_size").get<int>();
  h.member_count = j.at("count").get<long long>();
  h.masses = j.at("masses").get<std::vector<double>>();
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const NarModel& model, const std::vector<TierBucket>& buckets) {
  json header;
  header["format"] = "nar-checkpoint";
  header["version"] = 1;
  const ModelConfig& c = model.config;
  header["config"] = json{{"layers", c.layers},       {"dim", c.dim},
                          {"heads", c.heads},         {"ffn_dim", c.ffn_dim},
                          {"tiers", c.tiers},         {"channels", c.channels},
                          {"patch", c.patch},         {"ranking_weight", c.ranking_weight},
                          {"dropout", c.dropout},     {"family", family_name(c.family)}};
  header["normalization"] = json{{"mean", model.norm.mean}, {"stdev", model.norm.stdev}};

  json jbuckets = json::array();
  for (const TierBucket& b : buckets) {
    json jb;
    jb["tier"] = b.tier;
    jb["feature_count"] = b.feature_count;
    json ops = json::object();
    for (const auto& [code, count] : b.op_counts) ops[std::to_string(code)] = count;
    jb["op_counts"] = std::move(ops);
    json fh = json::array(), ph = json::array();
    for (const BatchHistogram& h : b.flops_histograms) fh.push_back(histogram_to_json(h));
    for (const BatchHistogram& h : b.params_histograms) ph.push_back(histogram_to_json(h));
    jb["flops_histograms"] = std::move(fh);
    jb["params_histograms"] = std::move(ph);
    jbuckets.push_back(std::move(jb));
  }
  header["buckets"] = std::move(jbuckets);

  json manifest = json::array();
  std::uint64_t offset = 0;
  const auto add_entry = [&](const std::string& name, const Tensor& t) {
    manifest.push_back(json{{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel());
  };
  for (const auto& [name, t] : model.params) add_entry(name, t);
  for (const TierBucket& b : buckets) add_entry("tier." + std::to_string(b.tier) + ".embedding", b.embedding);
  header["tensors"] = std::move(manifest);

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  std::uint64_t len = header_text.size();
  char len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<char>((len >> (8 * i)) & 0xff);
  out.write(len_bytes, 8);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, t] : model.params) write_doubles(out, t.data);
  for (const TierBucket& b : buckets) write_doubles(out, b.embedding.data);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error(path + " is not a checkpoint file");
  char len_bytes[8];
  in.read(len_bytes, 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(len_bytes[i])) << (8 * i);
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header in " + path);
  const json header = json::parse(header_text);
  if (header.at("format").get<std::string>() != "nar-checkpoint") {
    throw std::runtime_error(path + " has an unknown header format");
  }

  Checkpoint ckpt;
  const json& jc = header.at("config");
  ModelConfig config;
  config.layers = jc.at("layers").get<int>();
  config.dim = jc.at("dim").get<int>();
  config.heads = jc.at("heads").get<int>();
  config.ffn_dim = jc.at("ffn_dim").get<int>();
  config.tiers = jc.at("tiers").get<int>();
  config.channels = jc.at("channels").get<int>();
  config.patch = jc.at("patch").get<int>();
  config.ranking_weight = jc.at("ranking_weight").get<double>();
  config.dropout = jc.at("dropout").get<double>();
  config.family = family_from_name(jc.at("family").get<std::string>());
  ckpt.model = init_model(config, 0);
  ckpt.model.norm.mean = header.at("normalization").at("mean").get<std::vector<double>>();
  ckpt.model.norm.stdev = header.at("normalization").at("stdev").get<std::vector<double>>();

  ckpt.buckets = init_buckets(config);
  const json& jbuckets = header.at("buckets");
  if (static_cast<int>(jbuckets.size()) != config.tiers) {
    throw std::runtime_error("checkpoint bucket count does not match the configured tiers");
  }
  for (std::size_t i = 0; i < jbuckets.size(); ++i) {
    const json& jb = jbuckets[i];
    TierBucket& b = ckpt.buckets[i];
    b.tier = jb.at("tier").get<int>();
    b.feature_count = jb.at("feature_count").get<long long>();
    for (auto it = jb.at("op_counts").begin(); it != jb.at("op_counts").end(); ++it) {
      b.op_counts[std::stoi(it.key())] = it.value().get<long long>();
    }
    for (const json& h : jb.at("flops_histograms")) b.flops_histograms.push_back(histogram_from_json(h));
    for (const json& h : jb.at("params_histograms")) b.params_histograms.push_back(histogram_from_json(h));
  }

  std::size_t tensor_index = 0;
  const json& manifest = header.at("tensors");
  const auto read_tensor = [&](const std::string& expect, Tensor& t) {
    if (tensor_index >= manifest.size()) throw std::runtime_error("checkpoint manifest too short");
    const json& entry = manifest[tensor_index++];
    if (entry.at("name").get<std::string>() != expect) {
      throw std::runtime_error("checkpoint tensor order mismatch: expected " + expect + ", found " +
                               entry.at("name").get<std::string>());
    }
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != t.shape) throw std::runtime_error("checkpoint tensor shape mismatch for " + expect);
    read_doubles(in, t.data);
  };
  for (auto& [name, t] : ckpt.model.params) read_tensor(name, t);
  for (TierBucket& b : ckpt.buckets) read_tensor("tier." + std::to_string(b.tier) + ".embedding", b.embedding);
  if (!in) throw std::runtime_error("truncated checkpoint payload in " + path);
  return ckpt;
}

}  // namespace nar
