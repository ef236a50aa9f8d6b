// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "patchgraph/errors.hpp"

namespace patchgraph {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': expected " + std::string(expected) + ", got '" +
                    std::string(value) + "'");
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(to_u64(key, v)); }

std::optional<double> to_optional(std::string_view key, std::string_view v, std::string_view none) {
  if (v == none) return std::nullopt;
  return to_double(key, v);
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, p) : std::to_string(v);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::string_view to_string(ClassWeighting w) { return w == ClassWeighting::cb_sqrt ? "cb_sqrt" : "uniform"; }

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PG_DOUBLE(name, field)                                                           \
  Key{name, [](RunConfig& c, std::string_view v) { c.field = to_double(name, v); },     \
      [](const RunConfig& c) { return fmt(c.field); }}
#define PG_SIZE(name, field)                                                             \
  Key{name, [](RunConfig& c, std::string_view v) { c.field = to_size(name, v); },       \
      [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.field)); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      PG_SIZE("graph.k_spatial", graph.k_spatial),
      PG_SIZE("graph.k_knn", graph.k_knn),
      PG_SIZE("graph.k_reverse", graph.k_reverse),
      Key{"graph.sigma_f", [](RunConfig& c, std::string_view v) { c.graph.sigma_f = to_optional("graph.sigma_f", v, "auto"); },
          [](const RunConfig& c) { return c.graph.sigma_f ? fmt(*c.graph.sigma_f) : std::string("auto"); }},
      Key{"graph.sigma_s", [](RunConfig& c, std::string_view v) { c.graph.sigma_s = to_optional("graph.sigma_s", v, "auto"); },
          [](const RunConfig& c) { return c.graph.sigma_s ? fmt(*c.graph.sigma_s) : std::string("auto"); }},
      PG_DOUBLE("graph.gamma_spatial", graph.gamma.spatial),
      PG_DOUBLE("graph.gamma_knn", graph.gamma.knn),
      PG_DOUBLE("graph.gamma_reverse", graph.gamma.reverse),
      Key{"graph.normalization",
          [](RunConfig& c, std::string_view v) {
            if (v == "auto") c.normalization.reset();
            else if (v == "row") c.normalization = Normalization::row;
            else if (v == "sym") c.normalization = Normalization::sym;
            else bad_value("graph.normalization", v, "auto|row|sym");
          },
          [](const RunConfig& c) {
            if (!c.normalization) return std::string("auto");
            return std::string(*c.normalization == Normalization::row ? "row" : "sym");
          }},
      PG_DOUBLE("loss.lambda_ce", loss.ce),
      PG_DOUBLE("loss.lambda_dice", loss.dice),
      PG_DOUBLE("loss.lambda_lovasz", loss.lovasz),
      PG_DOUBLE("loss.lambda_potts", loss.potts),
      Key{"loss.class_weights",
          [](RunConfig& c, std::string_view v) {
            if (v == "cb_sqrt") c.class_weights = ClassWeighting::cb_sqrt;
            else if (v == "uniform") c.class_weights = ClassWeighting::uniform;
            else bad_value("loss.class_weights", v, "cb_sqrt|uniform");
          },
          [](const RunConfig& c) { return std::string(to_string(c.class_weights)); }},
      PG_SIZE("training.epochs", training.epochs),
      PG_DOUBLE("training.base_lr", training.base_lr),
      PG_DOUBLE("training.min_lr", training.min_lr),
      Key{"training.schedule", [](RunConfig& c, std::string_view v) { c.training.schedule = parse_schedule(v); },
          [](const RunConfig& c) { return std::string(to_string(c.training.schedule)); }},
      PG_DOUBLE("training.pct_start", training.pct_start),
      PG_DOUBLE("training.weight_decay", training.weight_decay),
      PG_DOUBLE("training.beta1", training.beta1),
      PG_DOUBLE("training.beta2", training.beta2),
      PG_DOUBLE("training.eps", training.eps),
      Key{"training.seed", [](RunConfig& c, std::string_view v) { c.training.seed = to_u64("training.seed", v); },
          [](const RunConfig& c) { return fmt(c.training.seed); }},
      Key{"training.grad_clip",
          [](RunConfig& c, std::string_view v) { c.training.grad_clip = to_optional("training.grad_clip", v, "none"); },
          [](const RunConfig& c) { return c.training.grad_clip ? fmt(*c.training.grad_clip) : std::string("none"); }},
      Key{"model.variant", [](RunConfig& c, std::string_view v) { c.model.variant = parse_model_variant(v); },
          [](const RunConfig& c) { return std::string(to_string(c.model.variant)); }},
      PG_SIZE("model.hidden", model.hidden),
      PG_SIZE("model.layers", model.layers),
      PG_SIZE("model.heads", model.heads),
      PG_DOUBLE("model.alpha", model.alpha),
      Key{"synth.seed", [](RunConfig& c, std::string_view v) { c.synth.seed = to_u64("synth.seed", v); },
          [](const RunConfig& c) { return fmt(c.synth.seed); }},
      PG_SIZE("synth.frames", synth.frames),
      PG_SIZE("synth.image_size", synth.image_size),
      PG_SIZE("synth.num_classes", synth.num_classes),
      PG_SIZE("synth.stride", synth.stride),
      PG_SIZE("synth.dim", synth.dim),
      PG_DOUBLE("synth.noise", synth.noise),
      PG_DOUBLE("synth.thin_gain", synth.thin_gain),
      PG_DOUBLE("synth.thin_width", synth.thin_width),
      PG_SIZE("synth.val_frames", synth.val_frames),
      PG_SIZE("synth.test_frames", synth.test_frames),
  };
  return table;
}

#undef PG_DOUBLE
#undef PG_SIZE

void flatten(const nlohmann::json& j, const std::string& prefix, RunConfig& config) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const auto& v = it.value();
    if (v.is_object()) flatten(v, key, config);
    else if (v.is_string()) config.set(key, v.get<std::string>());
    else if (v.is_null()) throw ConfigError("config key '" + key + "' is null");
    else if (v.is_boolean() || v.is_array()) throw ConfigError("config key '" + key + "' has an unsupported type");
    else if (v.is_number_float()) config.set(key, fmt(v.get<double>()));
    else config.set(key, v.dump());
  }
}

}  // namespace

ModelSpec ModelOptions::spec(std::size_t input_dim, std::size_t num_classes) const {
  ModelSpec s = default_spec(variant, input_dim, num_classes, hidden);
  if (layers > 0) s.layers = layers;
  s.heads = heads;
  s.alpha = alpha;
  return s;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.emplace_back(k.name);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const Key& k : keys())
    if (key == k.name) {
      k.set(*this, value);
      return;
    }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::merge_text(std::string_view text) {
  const std::string_view body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config JSON must be an object");
    flatten(j, "", *this);
    return;
  }
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str());
}

void RunConfig::set_seed(std::uint64_t seed) {
  training.seed = seed;
  synth.seed = seed;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Key& k : keys()) out.emplace_back(k.name, k.get(*this));
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::validate() const {
  if (graph.k_spatial != 4 && graph.k_spatial != 8)
    throw ConfigError("graph.k_spatial must be 4 or 8, got " + std::to_string(graph.k_spatial));
  if (graph.sigma_f && !(*graph.sigma_f > 0.0)) throw ConfigError("graph.sigma_f must be positive");
  if (graph.sigma_s && !(*graph.sigma_s > 0.0)) throw ConfigError("graph.sigma_s must be positive");
  for (double g : {graph.gamma.spatial, graph.gamma.knn, graph.gamma.reverse})
    if (!(g > 0.0 && g <= 1.0)) throw ConfigError("graph gamma values must lie in (0, 1]");
  loss.validate();
  training.validate();
  if (model.hidden == 0) throw ConfigError("model.hidden must be positive");
  if (model.variant == ModelVariant::gat_dgg && (model.heads == 0 || model.hidden % model.heads != 0))
    throw ConfigError("model.hidden must be divisible by model.heads");
  if (!(model.alpha >= 0.0 && model.alpha <= 1.0)) throw ConfigError("model.alpha must lie in [0, 1]");
  synth.validate();
}

Normalization RunConfig::normalization_for(const Model& model) const {
  return normalization ? *normalization : model.graph_normalization();
}

ClassWeightVector RunConfig::weights_for(std::span<const std::uint64_t> histogram) const {
  return class_weights == ClassWeighting::cb_sqrt ? class_weights_cb_sqrt(histogram)
                                                  : uniform_class_weights(histogram.size());
}

}  // namespace patchgraph
