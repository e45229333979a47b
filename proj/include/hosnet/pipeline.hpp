#pragma once

// End-to-end runs shared by the command-line tool and the acceptance suite:
// config resolution, dataset directories, training outputs, evaluation, and
// the ablation ladder.

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hosnet/trainer.hpp"

namespace hosnet {

namespace fs = std::filesystem;

// defaults ← optional file ← `key=value` overrides, applied in order.
inline Config resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
  Config c = Config::defaults();
  if (!file.empty()) c.merge(Config::load(file));
  for (auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override `" + kv + "` is not key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return c;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---- dataset directories ---------------------------------------------------
//
//   train.bin, query.bin, gallery.bin  (see save_samples)
//   config.txt                         data.* keys used to generate them

inline void save_dataset(const fs::path& dir, const DatasetSplit& d, const Config& c) {
  fs::create_directories(dir);
  save_samples((dir / "train.bin").string(), "train", d.config.seed, d.train);
  save_samples((dir / "query.bin").string(), "query", d.config.seed, d.query);
  save_samples((dir / "gallery.bin").string(), "gallery", d.config.seed, d.gallery);
  std::ostringstream os;
  for (auto& [k, v] : c.entries())
    if (k.rfind("data.", 0) == 0) os << k << " = " << v << '\n';
  write_text(dir / "config.txt", os.str());
}

// Loads a dataset directory; its data.* keys replace those in `c`.
inline DatasetSplit load_dataset(const fs::path& dir, Config& c) {
  std::istringstream in(read_text(dir / "config.txt"));
  c.merge(Config::parse(in, (dir / "config.txt").string()));
  DatasetSplit d;
  d.config = DataConfig::from(c);
  d.train = load_samples((dir / "train.bin").string());
  d.query = load_samples((dir / "query.bin").string());
  d.gallery = load_samples((dir / "gallery.bin").string());
  std::set<int> ids;
  for (auto& s : d.train) ids.insert(s.id);
  d.train_identities = static_cast<int>(ids.size());
  if (!ids.empty() && *ids.rbegin() != d.train_identities - 1)
    throw Error("train labels in " + dir.string() + " are not contiguous from 0");
  return d;
}

inline DatasetSplit dataset_for(Config& c, const std::string& data_dir = {}) {
  if (!data_dir.empty()) return load_dataset(data_dir, c);
  return generate_dataset(DataConfig::from(c));
}

// ---- training and evaluation -----------------------------------------------

struct TrainedModel {
  std::unique_ptr<HosNet> model;
  TrainResult result;
};

inline TrainedModel train_model(const Config& c, const DatasetSplit& data, const EpochCallback& cb = {}) {
  TrainedModel t;
  t.model = std::make_unique<HosNet>(ModelConfig::from(c, static_cast<std::size_t>(data.train_identities)));
  t.result = train(*t.model, data, TrainConfig::from(c), cb);
  return t;
}

inline MetricsReport evaluate_model(const HosNet& model, const DatasetSplit& data,
                                    const std::vector<std::size_t>& ks) {
  const auto q = model.extract_inference_features(data.query);
  const auto g = model.extract_inference_features(data.gallery);
  return evaluate(descriptors(q, Modality::ir), descriptors(g, Modality::vis), ks);
}

inline std::string metrics_csv(const TrainResult& r) {
  std::string s = metrics_csv_header() + "\n";
  for (auto& m : r.epochs) s += metrics_csv_row(m) + "\n";
  return s;
}

inline void save_model(const fs::path& path, const HosNet& model, const Config& c, const TrainResult& r) {
  save_checkpoint(path.string(), model.params(),
                  {static_cast<int>(r.epochs.size()), c.serialize(), r.rng_state});
}

// Rebuilds the model recorded in a checkpoint. `c` receives its config.
inline std::unique_ptr<HosNet> load_model(const fs::path& path, const DatasetSplit* data, Config& c,
                                          const std::string& data_dir = {}) {
  const std::string config_text = read_checkpoint_meta(path.string()).config;
  c = Config::defaults();
  std::istringstream in(config_text);
  c.merge(Config::parse(in, path.string()));
  DatasetSplit local;
  if (!data) {
    local = dataset_for(c, data_dir);
    data = &local;
  }
  auto model = std::make_unique<HosNet>(ModelConfig::from(c, static_cast<std::size_t>(data->train_identities)));
  load_checkpoint(path.string(), model->params());
  return model;
}

inline std::string report_csv(const MetricsReport& m) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n";
  for (std::size_t i = 0; i < m.ks.size(); ++i) os << "rank" << m.ks[i] << ',' << m.cmc[i] << '\n';
  os << "map," << m.map << "\nintra_similarity," << m.intra_similarity << "\ninter_similarity,"
     << m.inter_similarity << "\ncross_modal_distance," << m.cross_modal_distance << "\nqueries,"
     << m.queries << "\ngallery," << m.gallery << "\nqueries_excluded," << m.queries_excluded << '\n';
  return os.str();
}

inline std::string histogram_csv(const SimilarityHistogram& h) {
  std::ostringstream os;
  os.precision(17);
  os << "bin_low,bin_high,intra_count,inter_count\n";
  for (std::size_t i = 0; i < h.intra.size(); ++i)
    os << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.intra[i] << ',' << h.inter[i] << '\n';
  return os.str();
}

inline std::vector<std::size_t> parse_ranks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(tok, &pos);
      if (pos != tok.size() || v < 1) throw std::invalid_argument(tok);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("--ranks expects positive integers, got `" + tok + "`");
    }
  }
  if (ks.empty()) throw ConfigError("--ranks is empty");
  return ks;
}

// ---- ablation ladder -------------------------------------------------------

struct AblationStep {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Baseline+SLE, then each component added in turn, then each single removal
// from the full model.
inline std::vector<AblationStep> ablation_ladder() {
  const std::pair<std::string, std::string> no_hsl{"hsl.enabled", "false"}, no_cfl{"cfl.enabled", "false"},
      no_mric{"loss.mric", "false"};
  return {
      {"baseline+sle", {no_hsl, no_cfl, no_mric}},
      {"+hsl", {no_cfl, no_mric}},
      {"+hsl+cfl", {no_mric}},
      {"full", {}},
      {"full-hsl", {no_hsl}},
      {"full-cfl", {no_cfl}},
      {"full-mric", {no_mric}},
  };
}

struct AblationRow {
  std::string name;
  MetricsReport report;
};

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << "config";
  if (!rows.empty())
    for (auto k : rows.front().report.ks) os << ",rank" << k;
  os << ",map,cross_modal_distance\n";
  for (auto& r : rows) {
    os << r.name;
    for (double v : r.report.cmc) os << ',' << v;
    os << ',' << r.report.map << ',' << r.report.cross_modal_distance << '\n';
  }
  return os.str();
}

}  // namespace hosnet
