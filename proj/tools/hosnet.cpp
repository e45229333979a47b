// hosnet: generate data, train, evaluate, gradient-check, and ablate.
//
// Exit codes: 0 success, 1 check failure or runtime error, 2 configuration error.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "hosnet/gradcheck.hpp"
#include "hosnet/pipeline.hpp"
#include "json.hpp"

using namespace hosnet;
using json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0, kCheckFailed = 1, kConfigError = 2;

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> set;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool out_required = true) {
  cmd->add_option("--config", o.config_file, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.set, "config override key=value (repeatable)");
  auto* out = cmd->add_option("--out", o.out, "output directory");
  if (out_required) out->required();
}

// Module toggles shared by train and ablate.
struct ModelFlags {
  bool no_hsl = false, no_cfl = false, no_mric = false, no_whitening = false;
  std::string fusion;
  long hyperedges = -1;
  double lambda = -1.0;
  long epochs = -1;
  long seed = -1;
  std::string data;

  void add(CLI::App* cmd) {
    cmd->add_flag("--no-hsl", no_hsl, "disable hypergraph relation enhancement");
    cmd->add_flag("--no-cfl", no_cfl, "disable middle-feature synthesis");
    cmd->add_flag("--no-mric", no_mric, "drop the MRIC loss");
    cmd->add_flag("--no-whitening", no_whitening, "bypass node whitening");
    cmd->add_option("--fusion", fusion, "middle-feature fusion")->check(CLI::IsMember({"gat", "add", "concat"}));
    cmd->add_option("--hyperedges", hyperedges, "hyperedge count M");
    cmd->add_option("--lambda", lambda, "attention pruning coefficient");
    cmd->add_option("--epochs", epochs, "training epochs (0 writes the initial checkpoint only)");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--data", data, "dataset directory written by gen-data")->check(CLI::ExistingDirectory);
  }

  void apply(Config& c) const {
    if (no_hsl) c.set("hsl.enabled", "false");
    if (no_cfl) c.set("cfl.enabled", "false");
    if (no_mric) c.set("loss.mric", "false");
    if (no_whitening) c.set("hsl.whitening", "false");
    if (!fusion.empty()) c.set("cfl.fusion", fusion);
    if (hyperedges >= 0) c.set("hsl.hyperedges", std::to_string(hyperedges));
    if (lambda >= 0.0) {
      std::ostringstream os;
      os.precision(17);
      os << lambda;
      c.set("cfl.lambda", os.str());
    }
    if (epochs >= 0) c.set("train.epochs", std::to_string(epochs));
    if (seed >= 0) c.set("train.seed", std::to_string(seed));
  }
};

json report_json(const MetricsReport& m) {
  json cmc = json::object();
  for (std::size_t i = 0; i < m.ks.size(); ++i) cmc["rank" + std::to_string(m.ks[i])] = m.cmc[i];
  return {{"cmc", cmc},
          {"map", m.map},
          {"intra_similarity", m.intra_similarity},
          {"inter_similarity", m.inter_similarity},
          {"cross_modal_distance", m.cross_modal_distance},
          {"queries", m.queries},
          {"gallery", m.gallery},
          {"queries_excluded", m.queries_excluded}};
}

int cmd_gen_data(const CommonOpts& o, long seed) {
  Config c = resolve_config(o.config_file, o.set);
  if (seed >= 0) c.set("data.seed", std::to_string(seed));
  const DatasetSplit d = generate_dataset(DataConfig::from(c));
  save_dataset(o.out, d, c);
  const auto& s = d.train.front().image.shape();
  json manifest = {{"seed", d.config.seed},
                   {"identities", d.config.identities},
                   {"train_identities", d.train_identities},
                   {"test_identities", d.config.test_identities()},
                   {"images_per_id_per_modality", d.config.images_per_id},
                   {"noise", d.config.noise},
                   {"image_shape", {s[0], s[1], s[2]}},
                   {"files",
                    {{"train", {{"path", "train.bin"}, {"count", d.train.size()}}},
                     {"query", {{"path", "query.bin"}, {"count", d.query.size()}, {"modality", "ir"}}},
                     {"gallery", {{"path", "gallery.bin"}, {"count", d.gallery.size()}, {"modality", "vis"}}}}}};
  write_text(fs::path(o.out) / "manifest.json", manifest.dump(2) + "\n");
  std::printf("wrote %s: %d train / %d test identities\n", o.out.c_str(), d.train_identities,
              d.config.test_identities());
  return kOk;
}

int cmd_train(const CommonOpts& o, const ModelFlags& f) {
  Config c = resolve_config(o.config_file, o.set);
  f.apply(c);
  const DatasetSplit data = dataset_for(c, f.data);
  TrainConfig::from(c);  // validate before touching the output directory
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "config.txt", c.serialize());
  std::printf("%s\n", metrics_csv_header().c_str());
  const auto t0 = std::chrono::steady_clock::now();
  auto t = train_model(c, data, [](const EpochMetrics& m) {
    std::printf("%s\n", metrics_csv_row(m).c_str());
    std::fflush(stdout);
  });
  save_model(fs::path(o.out) / "checkpoint.bin", *t.model, c, t.result);
  write_text(fs::path(o.out) / "metrics.csv", metrics_csv(t.result));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "trained %zu epochs (%ld steps) in %.1fs; initial distance %.4f\n",
               t.result.epochs.size(), t.result.steps, secs, t.result.initial_distance);
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& ranks,
             const std::string& out) {
  const auto ks = parse_ranks(ranks);
  Config c;
  DatasetSplit data;
  {
    // data follows the checkpoint's config unless a directory is given
    Config probe = Config::defaults();
    std::istringstream in(read_checkpoint_meta(checkpoint).config);
    probe.merge(Config::parse(in, checkpoint));
    data = dataset_for(probe, data_dir);
  }
  const auto model = load_model(checkpoint, &data, c);
  const MetricsReport m = evaluate_model(*model, data, ks);
  const auto q = model->extract_inference_features(data.query);
  const auto g = model->extract_inference_features(data.gallery);
  const auto hist = similarity_histogram(descriptors(q, Modality::ir), descriptors(g, Modality::vis));
  fs::create_directories(out);
  write_text(fs::path(out) / "report.json", report_json(m).dump(2) + "\n");
  write_text(fs::path(out) / "report.csv", report_csv(m));
  write_text(fs::path(out) / "similarity_histogram.csv", histogram_csv(hist));
  for (std::size_t i = 0; i < ks.size(); ++i) std::printf("rank%zu %.4f\n", ks[i], m.cmc[i]);
  std::printf("map %.4f\ncross_modal_distance %.4f\n", m.map, m.cross_modal_distance);
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& opt, bool list) {
  if (list) {
    for (auto& n : gradcheck_names()) std::printf("%s\n", n.c_str());
    return kOk;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradchecks(opt);
  bool ok = true;
  std::printf("finite-difference checks (h=%g, tolerance %g)\n", opt.h, opt.tolerance);
  for (auto& r : results) {
    if (r.exempt) continue;
    ok = ok && r.passed;
    std::printf("  %-24s %s  max_rel_error=%.3e  coords=%zu%s%s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.max_rel_error, r.coordinates, r.detail.empty() ? "" : "  ", r.detail.c_str());
  }
  std::printf("straight-through exempt (finite and clipped)\n");
  for (auto& r : results) {
    if (!r.exempt) continue;
    ok = ok && r.passed;
    std::printf("  %-24s %s  max|g|=%.3e  coords=%zu  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.max_rel_error, r.coordinates, r.detail.c_str());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s in %.1fs\n", ok ? "all checks passed" : "FAILED", secs);
  return ok ? kOk : kCheckFailed;
}

int cmd_ablate(const CommonOpts& o, const ModelFlags& f, const std::string& ranks, bool check) {
  const auto ks = parse_ranks(ranks);
  Config base = resolve_config(o.config_file, o.set);
  f.apply(base);
  const DatasetSplit data = dataset_for(base, f.data);
  fs::create_directories(o.out);
  std::vector<AblationRow> rows;
  for (const auto& step : ablation_ladder()) {
    Config c = base;
    for (auto& [k, v] : step.overrides) c.set(k, v);
    const auto t0 = std::chrono::steady_clock::now();
    auto t = train_model(c, data);
    rows.push_back({step.name, evaluate_model(*t.model, data, ks)});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "%-14s map %.4f rank1 %.4f (%.0fs)\n", step.name.c_str(), rows.back().report.map,
                 rows.back().report.cmc.front(), secs);
    write_text(fs::path(o.out) / (step.name + ".config.txt"), c.serialize());
  }
  const std::string table = ablation_table(rows);
  write_text(fs::path(o.out) / "ablation.csv", table);
  std::printf("%s", table.c_str());
  if (!check) return kOk;
  auto map_of = [&](const std::string& n) {
    for (auto& r : rows)
      if (r.name == n) return r.report.map;
    throw ContractError("missing ablation row " + n);
  };
  const double full = map_of("full"), baseline = map_of("baseline+sle");
  bool ok = full >= baseline + 0.03;
  std::printf("full %.4f vs baseline %.4f + 0.03: %s\n", full, baseline, ok ? "ok" : "violated");
  for (const char* r : {"full-hsl", "full-cfl", "full-mric"}) {
    const bool fine = map_of(r) <= full + 0.01;
    std::printf("%s %.4f <= full + 0.01: %s\n", r, map_of(r), fine ? "ok" : "violated");
    ok = ok && fine;
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hosnet: whitened hypergraph relation learning for cross-modality retrieval"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  long gen_seed = -1;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic two-modality dataset");
  add_common(gen, gen_opts);
  gen->add_option("--seed,--data-seed", gen_seed, "data seed");
  long identities = -1;
  gen->add_option("--identities", identities, "total identity count (2:1 train/test split)");

  CommonOpts train_opts;
  ModelFlags train_flags;
  auto* tr = app.add_subcommand("train", "train a model and write checkpoint.bin and metrics.csv");
  add_common(tr, train_opts);
  train_flags.add(tr);

  std::string ev_ckpt, ev_data, ev_ranks = "1,5,10,20", ev_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint.bin from train")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "dataset directory written by gen-data")->check(CLI::ExistingDirectory);
  ev->add_option("--ranks", ev_ranks, "comma-separated CMC ranks");
  ev->add_option("--out", ev_out, "output directory")->required();

  GradcheckOptions gc;
  bool gc_list = false;
  long gc_seed = 0;
  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  g->add_option("--op", gc.only, "run only this check");
  g->add_option("--inject-fault", gc.inject_fault, "corrupt the backward rule of this op");
  g->add_option("--seed", gc_seed, "input seed");
  g->add_flag("--list", gc_list, "list check names");

  CommonOpts ab_opts;
  ModelFlags ab_flags;
  std::string ab_ranks = "1,5,10,20";
  bool ab_check = false;
  auto* ab = app.add_subcommand("ablate", "train the ablation ladder and emit a comparison table");
  add_common(ab, ab_opts);
  ab_flags.add(ab);
  ab->add_option("--ranks", ab_ranks, "comma-separated CMC ranks");
  ab->add_flag("--check", ab_check, "exit 1 unless the ablation directions hold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) {
      if (identities >= 0) gen_opts.set.push_back("data.identities=" + std::to_string(identities));
      return cmd_gen_data(gen_opts, gen_seed);
    }
    if (*tr) return cmd_train(train_opts, train_flags);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_ranks, ev_out);
    if (*g) {
      gc.seed = static_cast<std::uint64_t>(gc_seed);
      return cmd_gradcheck(gc, gc_list);
    }
    if (*ab) return cmd_ablate(ab_opts, ab_flags, ab_ranks, ab_check);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  }
  return kOk;
}
