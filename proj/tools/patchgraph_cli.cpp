// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

// patchgraph: synth | build-graph | train | predict | eval | dump-edges.
// Exit status: 0 success, 1 usage or configuration error, 2 data or format
// error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "patchgraph/config.hpp"
#include "patchgraph/dataio.hpp"
#include "patchgraph/errors.hpp"
#include "patchgraph/gnn.hpp"
#include "patchgraph/graphbuild.hpp"
#include "patchgraph/metrics.hpp"
#include "patchgraph/sparse_graph.hpp"
#include "patchgraph/trainer.hpp"

namespace fs = std::filesystem;
using namespace patchgraph;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o, const std::string& default_out) {
  o.out = default_out;
  cmd->add_option("--config", o.config_path, "config file (key = value lines or JSON)");
  cmd->add_option("--seed", o.seed, "seed for training and synthetic data");
  cmd->add_option("--out", o.out, "run directory")->capture_default_str();
  cmd->add_option("--override", o.overrides, "key=value, applied after --config (repeatable)")->take_all();
}

RunConfig load_config(const CommonOptions& o) {
  RunConfig c;
  if (!o.config_path.empty()) c.merge_file(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--override expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.set_seed(*o.seed);
  c.validate();
  return c;
}

// Records produced files and writes them, with the effective config, into the
// run directory on finish().
class RunDir {
 public:
  RunDir(fs::path dir, const RunConfig& config) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    std::cout << "# effective config\n" << config.echo() << std::flush;
    write_text("config.txt", config.echo());
  }

  const fs::path& dir() const { return dir_; }
  fs::path path(const fs::path& rel) const { return dir_ / rel; }

  void produced(const fs::path& rel) {
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  }

  void write_text(const fs::path& rel, const std::string& text) {
    std::ofstream out(path(rel), std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path(rel).string());
    produced(rel);
  }

  void finish() {
    std::string list;
    for (const auto& f : files_) list += f.generic_string() + "\n";
    std::ofstream out(path("outputs.txt"), std::ios::binary);
    out << list;
  }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
};

std::size_t infer_num_classes(const fs::path& manifest_path, std::span<const std::vector<Frame>* const> splits) {
  const auto names = read_class_names(manifest_path);
  if (!names.empty()) return names.size();
  int max_label = -1;
  for (const auto* frames : splits)
    for (const auto& f : *frames)
      for (auto v : f.mask.pixels)
        if (v != kIgnoreLabel) max_label = std::max<int>(max_label, v);
  if (max_label < 0) throw DataError("no labelled pixel in the dataset; cannot infer the class count");
  return static_cast<std::size_t>(max_label) + 1;
}

std::vector<std::string> class_names_or_default(const fs::path& manifest_path, std::size_t num_classes) {
  auto names = read_class_names(manifest_path);
  if (names.size() != num_classes) names.clear();
  return names;
}

std::vector<PreparedFrame> prepare_all(const std::vector<Frame>& frames, const RunConfig& config, const Model& model) {
  std::vector<PreparedFrame> out;
  out.reserve(frames.size());
  for (const auto& f : frames)
    out.push_back(prepare_frame(f, frame_graph(f, config.graph), config.normalization_for(model), model));
  return out;
}

Frame unlabeled_frame(const fs::path& embedding) {
  Frame f;
  f.name = embedding.stem().string();
  f.grid = read_embedding(embedding);
  f.mask = LabelMask(f.grid.image_height, f.grid.image_width, kIgnoreLabel);
  return f;
}

// --- commands -----------------------------------------------------------------------

int cmd_synth(const CommonOptions& o) {
  const RunConfig config = load_config(o);
  RunDir run(o.out, config);
  const fs::path manifest = synth_generate(config.synth, run.dir());
  // manifest entries are already relative to the run directory
  const SplitManifest written = SplitManifest::read(manifest);
  for (const auto& e : written.entries()) {
    run.produced(e.embedding);
    run.produced(e.mask);
    if (!e.image.empty()) run.produced(e.image);
  }
  run.produced("manifest.csv");
  run.produced("classes.txt");
  run.finish();
  std::cout << "wrote " << config.synth.frames << " frames; manifest " << manifest.string() << "\n";
  return 0;
}

int cmd_build_graph(const CommonOptions& o, const std::string& embedding) {
  const RunConfig config = load_config(o);
  const PatchEmbeddingGrid grid = read_embedding(embedding);
  RunDir run(o.out, config);
  const Normalization norm = config.normalization ? *config.normalization
                             : config.model.variant == ModelVariant::gat_dgg ? Normalization::row
                                                                             : Normalization::sym;
  const SparseGraph graph = normalize(build_hybrid_weights(grid, config.graph), norm);
  const fs::path rel = fs::path(embedding).stem().string() + ".pggr";
  write_graph(graph, run.path(rel));
  run.produced(rel);
  run.finish();
  std::cout << "nodes " << graph.num_nodes() << " edges " << graph.num_edges() << "\n";
  std::cout << "graph " << run.path(rel).string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& manifest_path, const std::string& resume_path) {
  const RunConfig config = load_config(o);
  const SplitManifest manifest = SplitManifest::read(manifest_path);
  const std::vector<Frame> train = load_split(manifest, Split::train);
  const std::vector<Frame> val = load_split(manifest, Split::val);
  if (train.empty()) throw ConfigError("manifest has no training frames");
  if (val.empty()) throw ConfigError("manifest has no validation frames");
  const std::vector<Frame>* splits[] = {&train, &val};

  std::optional<Checkpoint> resumed;
  ResumeState resume;
  Model model = [&] {
    if (!resume_path.empty()) {
      resumed = read_checkpoint(resume_path);
      resume = resume_state(*resumed);
      const fs::path best = fs::path(resume_path).parent_path() / "best.pgck";
      if (fs::exists(best)) resume.best = read_checkpoint(best).model();
      return resumed->model();
    }
    const std::size_t c = infer_num_classes(manifest_path, splits);
    return Model::create(config.model.spec(train.front().grid.dim(), c), config.training.seed);
  }();

  RunDir run(o.out, config);
  const auto histogram = class_histogram(train, model.spec().num_classes);
  const ClassWeightVector weights = config.weights_for(histogram);
  const std::vector<PreparedFrame> train_p = prepare_all(train, config, model);
  const std::vector<PreparedFrame> val_p = prepare_all(val, config, model);

  std::vector<HistoryRow> rows;
  TrainHooks hooks;
  hooks.on_epoch = [&](const HistoryRow& r) {
    rows.push_back(r);
    std::printf("epoch %zu/%zu loss %.6f val_miou %.4f val_mdice %.4f lr %.3g\n", r.epoch, config.training.epochs,
                r.train_loss, r.val_miou, r.val_mdice, r.lr);
    std::fflush(stdout);
    run.write_text("history.csv", history_csv(rows));
  };
  hooks.on_checkpoint = [&](const Model& last, const AdamState& adam, std::size_t epochs_done, double best_val,
                            const Model& best) {
    write_checkpoint(run.path("last.pgck"), last, trainer_extras(last.parameters(), adam, epochs_done, best_val));
    run.produced("last.pgck");
    write_checkpoint(run.path("best.pgck"), best, trainer_extras(best.parameters(), adam, epochs_done, best_val));
    run.produced("best.pgck");
  };
  const TrainResult result = train_loop(model, train_p, val_p, config.training, config.loss, weights, hooks,
                                        resumed ? &resume : nullptr);
  run.finish();
  std::printf("best val_miou %.4f (epoch %zu); steps %llu\n", result.best_val_miou, result.best_epoch,
              static_cast<unsigned long long>(result.adam.step));
  return 0;
}

int cmd_predict(const CommonOptions& o, const std::string& checkpoint, const std::string& embedding) {
  const RunConfig config = load_config(o);
  const Model model = read_checkpoint(checkpoint).model();
  const Frame frame = unlabeled_frame(embedding);
  RunDir run(o.out, config);
  const PreparedFrame prepared =
      prepare_frame(frame, frame_graph(frame, config.graph), config.normalization_for(model), model);
  const LabelMask mask = predict_mask(model, prepared);
  const fs::path rel = frame.name + ".pgm";
  write_pgm(mask, run.path(rel));
  run.produced(rel);
  run.finish();
  std::cout << "mask " << run.path(rel).string() << " (" << mask.height << "x" << mask.width << ")\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& manifest_path, const std::string& checkpoint,
             const std::string& split_name) {
  const RunConfig config = load_config(o);
  const Model model = read_checkpoint(checkpoint).model();
  const SplitManifest manifest = SplitManifest::read(manifest_path);
  const std::vector<Frame> frames = load_split(manifest, parse_split(split_name));
  if (frames.empty()) throw DataError("split '" + split_name + "' has no frames");
  RunDir run(o.out, config);
  const std::vector<PreparedFrame> prepared = prepare_all(frames, config, model);
  const EvaluationReport report =
      make_report(evaluate(model, prepared), class_names_or_default(manifest_path, model.spec().num_classes));
  run.write_text("report.csv", report.to_csv());
  run.write_text("report.json", report.to_json());
  run.finish();
  std::cout << report.to_csv();
  return 0;
}

struct EdgeRow {
  std::uint32_t dst;
  EdgeType type;
  double weight;
};

int cmd_dump_edges(const CommonOptions& o, const std::string& source, const std::string& embedding, std::size_t node,
                   std::size_t top) {
  const RunConfig config = load_config(o);
  SparseGraph graph;
  std::vector<double> weight;  // per stored edge
  std::string kind;
  std::vector<std::uint8_t> head(4, 0);
  {
    std::ifstream in(source, std::ios::binary);
    if (!in) throw DataError("cannot open " + source);
    in.read(reinterpret_cast<char*>(head.data()), 4);
  }
  const std::string magic(head.begin(), head.end());
  if (magic == "PGGR") {
    graph = read_graph(source);
    weight.assign(graph.weights().begin(), graph.weights().end());
    kind = "static";
  } else {
    const Model model = read_checkpoint(source).model();
    if (embedding.empty()) throw ConfigError("dump-edges from a checkpoint needs --embedding");
    const Frame frame = unlabeled_frame(embedding);
    const PreparedFrame prepared =
        prepare_frame(frame, frame_graph(frame, config.graph), config.normalization_for(model), model);
    graph = prepared.graph;
    if (model.spec().variant == ModelVariant::gat_dgg) {
      Tape tape;
      BoundParameters bound(tape, model.parameters(), /*requires_grad=*/false);
      const ForwardResult fwd = model.forward(bound, tape.constant(prepared.features), prepared.graph);
      const Tensor& gated = fwd.gated.back().value();
      weight.assign(graph.num_edges(), 0.0);
      for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        for (std::size_t k = 0; k < gated.cols(); ++k) weight[e] += gated(e, k);
        weight[e] /= static_cast<double>(gated.cols());
      }
      kind = "gated";
    } else {
      weight.assign(graph.weights().begin(), graph.weights().end());
      kind = "static";
    }
  }
  if (node >= graph.num_nodes())
    throw ConfigError("node " + std::to_string(node) + " out of range (N = " + std::to_string(graph.num_nodes()) + ")");
  std::vector<EdgeRow> rows;
  const auto cols = graph.columns();
  const auto types = graph.types();
  for (std::size_t e = graph.row_begin(node); e < graph.row_end(node); ++e) rows.push_back({cols[e], types[e], weight[e]});
  std::stable_sort(rows.begin(), rows.end(), [](const EdgeRow& a, const EdgeRow& b) { return a.weight > b.weight; });
  if (rows.size() > top) rows.resize(top);

  RunDir run(o.out, config);
  std::ostringstream csv;
  csv.precision(17);
  csv << "src,dst,type," << kind << "_weight\n";
  for (const auto& r : rows) csv << node << ',' << r.dst << ',' << to_string(r.type) << ',' << r.weight << '\n';
  const fs::path rel = "edges_node" + std::to_string(node) + ".csv";
  run.write_text(rel, csv.str());
  run.finish();
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees many large same-sized buffers per step;
  // keep them on the heap instead of returning them to the kernel.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  CLI::App app{"patch-graph segmentation engine"};
  app.require_subcommand(1);

  CommonOptions synth_o, graph_o, train_o, predict_o, eval_o, dump_o;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_o, "synth");

  std::string graph_embedding;
  auto* graph = app.add_subcommand("build-graph", "build the hybrid graph of one embedding file");
  graph->add_option("embedding", graph_embedding, "PGEM file")->required();
  add_common(graph, graph_o, "run");

  std::string train_manifest, train_resume;
  auto* train = app.add_subcommand("train", "train a model on a split manifest");
  train->add_option("manifest", train_manifest, "manifest.csv")->required();
  train->add_option("--resume", train_resume, "last.pgck of an earlier run");
  add_common(train, train_o, "run");

  std::string predict_ckpt, predict_embedding;
  auto* predict = app.add_subcommand("predict", "write the predicted mask of one embedding file");
  predict->add_option("checkpoint", predict_ckpt, "PGCK file")->required();
  predict->add_option("embedding", predict_embedding, "PGEM file")->required();
  add_common(predict, predict_o, "run");

  std::string eval_manifest, eval_ckpt, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "per-class IoU/Dice of a checkpoint on one split");
  eval->add_option("manifest", eval_manifest, "manifest.csv")->required();
  eval->add_option("checkpoint", eval_ckpt, "PGCK file")->required();
  eval->add_option("--split", eval_split, "train|val|test")->capture_default_str();
  add_common(eval, eval_o, "run");

  std::string dump_source, dump_embedding;
  std::size_t dump_node = 0, dump_top = 10;
  auto* dump = app.add_subcommand("dump-edges", "strongest out-edges of one node");
  dump->add_option("source", dump_source, "PGGR graph or PGCK checkpoint")->required();
  dump->add_option("--embedding", dump_embedding, "PGEM file (checkpoint sources)");
  dump->add_option("--node", dump_node, "node index")->required();
  dump->add_option("--top", dump_top, "number of edges")->capture_default_str();
  add_common(dump, dump_o, "run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(synth_o);
    if (*graph) return cmd_build_graph(graph_o, graph_embedding);
    if (*train) return cmd_train(train_o, train_manifest, train_resume);
    if (*predict) return cmd_predict(predict_o, predict_ckpt, predict_embedding);
    if (*eval) return cmd_eval(eval_o, eval_manifest, eval_ckpt, eval_split);
    if (*dump) return cmd_dump_edges(dump_o, dump_source, dump_embedding, dump_node, dump_top);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
