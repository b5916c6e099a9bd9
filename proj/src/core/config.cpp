#include "core/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mppm {

namespace {

std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  int out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  uint64_t out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<int> to_sizes(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) throw ConfigError("key '" + key + "': empty size entry");
    out.push_back(to_int(key, part));
  }
  if (out.size() < 2) throw ConfigError("key '" + key + "': need at least two layer sizes");
  return out;
}

// Pops keys from a working copy so leftovers can be reported as unknown.
struct KeyReader {
  KeyValues kv;

  bool has(const std::string& key) const { return kv.count(key) > 0; }
  std::string take(const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::string v = it->second;
    kv.erase(it);
    return v;
  }
  double take_double(const std::string& key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    double v = to_double(key, it->second);
    kv.erase(it);
    return v;
  }
  int take_int(const std::string& key, int fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    int v = to_int(key, it->second);
    kv.erase(it);
    return v;
  }
  uint64_t take_u64(const std::string& key, uint64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    uint64_t v = to_u64(key, it->second);
    kv.erase(it);
    return v;
  }
  bool take_bool(const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    bool v = to_bool(key, it->second);
    kv.erase(it);
    return v;
  }
  std::vector<int> take_sizes(const std::string& key, std::vector<int> fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    auto v = to_sizes(key, it->second);
    kv.erase(it);
    return v;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::train_ambient: return "train_ambient";
    case RunMode::train_latent: return "train_latent";
    case RunMode::reconstruct: return "reconstruct";
    case RunMode::generate: return "generate";
    case RunMode::evaluate: return "evaluate";
    case RunMode::grad_check: return "gradcheck";
  }
  return "unknown";
}

KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (size_t hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

KeyValues load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(KeyValues& kv, const std::string& spec) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos || trim(spec.substr(0, eq)).empty())
    throw ConfigError("override must look like key=value: " + spec);
  kv[trim(spec.substr(0, eq))] = trim(spec.substr(eq + 1));
}

RunConfig resolve_config(const KeyValues& raw) {
  KeyReader r{raw};
  RunConfig cfg;

  cfg.dataset.kind = r.take("dataset", "circle");
  if (cfg.dataset.kind != "circle" && cfg.dataset.kind != "mnist")
    throw ConfigError("dataset must be circle or mnist");
  const bool mnist = cfg.dataset.kind == "mnist";

  std::string mode = r.take("mode", "train");
  if (mode == "train") mode = mnist ? "train_latent" : "train_ambient";
  if (mode == "train_ambient") cfg.mode = RunMode::train_ambient;
  else if (mode == "train_latent") cfg.mode = RunMode::train_latent;
  else if (mode == "reconstruct") cfg.mode = RunMode::reconstruct;
  else if (mode == "generate") cfg.mode = RunMode::generate;
  else if (mode == "evaluate") cfg.mode = RunMode::evaluate;
  else if (mode == "gradcheck") cfg.mode = RunMode::grad_check;
  else throw ConfigError("unknown mode: " + mode);

  cfg.seed = r.take_u64("seed", 1);
  cfg.out_dir = r.take("out", "runs/out");
  cfg.checkpoint = r.take("checkpoint", "");

  cfg.dataset.circle.count = r.take_int("circle.count", 5500);
  cfg.dataset.circle.theta0 = r.take_double("circle.theta0", cfg.dataset.circle.theta0);
  cfg.dataset.circle.sigma_theta = r.take_double("circle.sigma_theta", 0.5);
  cfg.dataset.circle.theta_min = r.take_double("circle.theta_min", cfg.dataset.circle.theta_min);
  cfg.dataset.circle.theta_max = r.take_double("circle.theta_max", cfg.dataset.circle.theta_max);
  cfg.dataset.train_images = r.take("mnist.train_images", "data/mnist-train-images.idx");
  cfg.dataset.train_labels = r.take("mnist.train_labels", "data/mnist-train-labels.idx");
  cfg.dataset.test_images = r.take("mnist.test_images", "data/mnist-test-images.idx");
  cfg.dataset.test_labels = r.take("mnist.test_labels", "data/mnist-test-labels.idx");
  cfg.dataset.train_subset = r.take_int("mnist.train_subset", 0);
  cfg.dataset.test_subset = r.take_int("mnist.test_subset", 0);

  // Architecture. Presets follow the two reference setups; explicit size
  // lists override them layer for layer.
  std::string preset = r.take("arch", mnist ? "mnist" : "synthetic");
  if (preset != "synthetic" && preset != "mnist")
    throw ConfigError("arch must be synthetic or mnist");
  const bool image_preset = preset == "mnist";
  int latent = r.take_int("arch.latent", image_preset ? 18 : 8);
  int ambient = image_preset ? 784 : 3;

  bool train_mode = cfg.mode == RunMode::train_ambient || cfg.mode == RunMode::train_latent;
  if (cfg.mode == RunMode::train_ambient) cfg.arch.space = Space::ambient;
  else if (cfg.mode == RunMode::train_latent) cfg.arch.space = Space::latent;
  else cfg.arch.space = mnist ? Space::latent : Space::ambient;

  std::vector<int> enc_default, dec_default, dist_hidden;
  if (image_preset) {
    enc_default = {ambient, 256, 128, latent};
    dec_default = {latent, 128, 256, ambient};
    dist_hidden = {100, 50, 20};
  } else {
    enc_default = {ambient, 64, 32, 16, latent};
    dec_default = {latent, 16, 32, 64, ambient};
    dist_hidden = {64, 32, 16};
  }
  int dist_in = cfg.arch.space == Space::ambient ? ambient : latent;
  std::vector<int> dist_default{dist_in};
  dist_default.insert(dist_default.end(), dist_hidden.begin(), dist_hidden.end());
  dist_default.push_back(1);

  std::vector<int> enc = r.take_sizes("arch.encoder", enc_default);
  std::vector<int> dec = r.take_sizes("arch.decoder", dec_default);
  std::vector<int> dist = r.take_sizes("arch.distance", dist_default);
  double dropout = r.take_double("arch.dropout", 0.2);
  std::string head = r.take("arch.decoder_head", image_preset ? "sigmoid" : "identity");
  Activation head_act;
  if (head == "sigmoid") head_act = Activation::sigmoid;
  else if (head == "identity") head_act = Activation::identity;
  else throw ConfigError("arch.decoder_head must be identity or sigmoid");

  cfg.arch.encoder = mlp_spec(enc);
  cfg.arch.decoder = mlp_spec(dec, head_act);
  cfg.arch.distance = mlp_spec(dist, Activation::identity, dropout);
  cfg.arch.sigma_d = r.take_double("sigma_d", mnist ? 0.4 : 0.25);

  cfg.kernel.sigma_ker = r.take_double("sigma_ker", 0.0);
  cfg.kernel.n_samples = r.take_int("kernel.samples", mnist ? 64 : 256);
  cfg.kernel.subsample_k = r.take_int("kernel.subsample_k", 512);
  cfg.kernel.subsample_threshold = r.take_int("kernel.subsample_threshold", 2000);
  // Positive placeholder until training resolves the heuristic bandwidth.
  cfg.arch.sigma_ker = cfg.kernel.sigma_ker > 0.0 ? cfg.kernel.sigma_ker : 0.1;

  for (int k = 0; k < 6; ++k)
    cfg.weights.lambda[static_cast<size_t>(k)] =
        r.take_double("lambda" + std::to_string(k + 1), 1.0);
  cfg.weights.square_consistency_terms = r.take_bool("square_consistency_terms", false);
  cfg.weights.detach_shift_direction = r.take_bool("detach_shift_direction", false);

  double lr = r.take_double("lr", 1e-3);
  double dist_lr = r.take_double("distance_lr", mnist ? 1e-5 : lr);
  double wd = r.take_double("weight_decay", 1e-4);
  double b1 = r.take_double("adam_beta1", 0.9);
  double b2 = r.take_double("adam_beta2", 0.999);
  double eps = r.take_double("adam_eps", 1e-8);
  cfg.opt.autoencoder = {lr, b1, b2, eps, wd};
  cfg.opt.distance = {dist_lr, b1, b2, eps, wd};

  cfg.train.epochs = r.take_int("epochs", mnist ? 100 : 500);
  cfg.train.batch_size = r.take_int("batch_size", mnist ? 128 : 550);
  cfg.train.patience = r.take_int("patience", mnist ? 8 : 100);

  cfg.projection.alpha = r.take_double("alpha", 0.15);
  cfg.projection.beta = r.take_double("beta", 0.1);
  int default_steps = 60;
  if (cfg.mode == RunMode::generate) default_steps = 16;
  else if (!train_mode && mnist) default_steps = 4;
  cfg.projection.num_steps = r.take_int("steps", default_steps);
  cfg.projection.convergence_tol =
      r.take_double("tol", cfg.mode == RunMode::generate ? 0.0 : 0.005);
  cfg.projection.record_trajectory = r.take_bool("record_trajectory", false);

  std::string deg = r.take("degrade", "none");
  cfg.degrade_enabled = deg != "none";
  if (cfg.degrade_enabled) cfg.degrade.kind = degradation_from_name(deg);
  cfg.degrade.sigma = r.take_double("degrade.sigma", cfg.degrade.sigma);
  cfg.degrade.factor = r.take_double("degrade.factor", cfg.degrade.factor);
  cfg.degrade.coverage = r.take_double("degrade.coverage", cfg.degrade.coverage);
  cfg.degrade.count = r.take_int("degrade.count", cfg.degrade.count);
  cfg.degrade.strength = r.take_double("degrade.strength", cfg.degrade.strength);
  cfg.degrade.blur_sigma = r.take_double("degrade.blur_sigma", cfg.degrade.blur_sigma);
  cfg.degrade.alpha = r.take_double("degrade.alpha", cfg.degrade.alpha);
  cfg.degrade.elastic_sigma = r.take_double("degrade.elastic_sigma", cfg.degrade.elastic_sigma);
  cfg.degrade.seed = r.take_u64("degrade.seed", cfg.seed);

  int default_count = 0;
  if (cfg.mode == RunMode::generate) default_count = 50;
  else if (cfg.mode == RunMode::reconstruct || cfg.mode == RunMode::evaluate) default_count = 200;
  cfg.count = r.take_int("count", default_count);

  if (!r.kv.empty()) {
    std::string keys;
    for (const auto& [k, v] : r.kv) keys += (keys.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + keys);
  }

  // Cross-field validation.
  cfg.arch.validate();
  cfg.weights.validate();
  cfg.projection.validate();
  cfg.degrade.validate();
  if (cfg.train.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.train.patience < 1) throw ConfigError("patience must be >= 1");
  if (cfg.count < 0) throw ConfigError("count must be >= 0");
  if (cfg.kernel.n_samples < 1) throw ConfigError("kernel.samples must be >= 1");
  if (cfg.kernel.subsample_k < 1) throw ConfigError("kernel.subsample_k must be >= 1");
  if (cfg.kernel.subsample_threshold < 1)
    throw ConfigError("kernel.subsample_threshold must be >= 1");
  if (cfg.dataset.train_subset < 0 || cfg.dataset.test_subset < 0)
    throw ConfigError("subset sizes must be >= 0");
  if (!(cfg.opt.autoencoder.lr > 0.0) || !(cfg.opt.distance.lr > 0.0))
    throw ConfigError("learning rates must be positive");
  if (cfg.opt.autoencoder.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.dataset.circle.count < 1) throw ConfigError("circle.count must be >= 1");

  bool inference = cfg.mode == RunMode::reconstruct || cfg.mode == RunMode::generate ||
                   cfg.mode == RunMode::evaluate;
  if (inference) {
    if (cfg.checkpoint.empty()) throw ConfigError("this mode requires checkpoint=<dir>");
    if (!std::filesystem::exists(cfg.checkpoint))
      throw ConfigError("checkpoint path does not exist: " + cfg.checkpoint);
  }
  if (mnist) {
    if (train_mode && !std::filesystem::exists(cfg.dataset.train_images))
      throw ConfigError("missing dataset file: " + cfg.dataset.train_images);
    bool needs_test = cfg.mode == RunMode::reconstruct || cfg.mode == RunMode::evaluate;
    if (needs_test && !std::filesystem::exists(cfg.dataset.test_images))
      throw ConfigError("missing dataset file: " + cfg.dataset.test_images);
  }
  return cfg;
}

namespace {

std::string sizes_to_string(const NetSpec& spec) {
  std::string out;
  for (size_t i = 0; i < spec.sizes.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(spec.sizes[i]);
  }
  return out;
}

}  // namespace

std::string render_config(const RunConfig& cfg) {
  std::ostringstream o;
  o << "mode = " << run_mode_name(cfg.mode) << "\n";
  o << "seed = " << cfg.seed << "\n";
  o << "out = " << cfg.out_dir << "\n";
  o << "checkpoint = " << cfg.checkpoint << "\n";
  o << "dataset = " << cfg.dataset.kind << "\n";
  o << "circle.count = " << cfg.dataset.circle.count << "\n";
  o << "circle.theta0 = " << fmt(cfg.dataset.circle.theta0) << "\n";
  o << "circle.sigma_theta = " << fmt(cfg.dataset.circle.sigma_theta) << "\n";
  o << "circle.theta_min = " << fmt(cfg.dataset.circle.theta_min) << "\n";
  o << "circle.theta_max = " << fmt(cfg.dataset.circle.theta_max) << "\n";
  o << "mnist.train_images = " << cfg.dataset.train_images << "\n";
  o << "mnist.train_labels = " << cfg.dataset.train_labels << "\n";
  o << "mnist.test_images = " << cfg.dataset.test_images << "\n";
  o << "mnist.test_labels = " << cfg.dataset.test_labels << "\n";
  o << "mnist.train_subset = " << cfg.dataset.train_subset << "\n";
  o << "mnist.test_subset = " << cfg.dataset.test_subset << "\n";
  o << "arch.encoder = " << sizes_to_string(cfg.arch.encoder) << "\n";
  o << "arch.decoder = " << sizes_to_string(cfg.arch.decoder) << "\n";
  o << "arch.distance = " << sizes_to_string(cfg.arch.distance) << "\n";
  o << "arch.dropout = "
    << fmt(cfg.arch.distance.dropout.empty() ? 0.0 : cfg.arch.distance.dropout.front()) << "\n";
  o << "arch.decoder_head = "
    << (cfg.arch.decoder.activations.back() == Activation::sigmoid ? "sigmoid" : "identity")
    << "\n";
  o << "sigma_d = " << fmt(cfg.arch.sigma_d) << "\n";
  o << "sigma_ker = " << fmt(cfg.kernel.sigma_ker) << "\n";
  for (int k = 0; k < 6; ++k)
    o << "lambda" << k + 1 << " = " << fmt(cfg.weights.lambda[static_cast<size_t>(k)]) << "\n";
  o << "square_consistency_terms = "
    << (cfg.weights.square_consistency_terms ? "true" : "false") << "\n";
  o << "detach_shift_direction = " << (cfg.weights.detach_shift_direction ? "true" : "false")
    << "\n";
  o << "lr = " << fmt(cfg.opt.autoencoder.lr) << "\n";
  o << "distance_lr = " << fmt(cfg.opt.distance.lr) << "\n";
  o << "weight_decay = " << fmt(cfg.opt.autoencoder.weight_decay) << "\n";
  o << "adam_beta1 = " << fmt(cfg.opt.autoencoder.beta1) << "\n";
  o << "adam_beta2 = " << fmt(cfg.opt.autoencoder.beta2) << "\n";
  o << "adam_eps = " << fmt(cfg.opt.autoencoder.eps) << "\n";
  o << "epochs = " << cfg.train.epochs << "\n";
  o << "batch_size = " << cfg.train.batch_size << "\n";
  o << "patience = " << cfg.train.patience << "\n";
  o << "alpha = " << fmt(cfg.projection.alpha) << "\n";
  o << "beta = " << fmt(cfg.projection.beta) << "\n";
  o << "steps = " << cfg.projection.num_steps << "\n";
  o << "tol = " << fmt(cfg.projection.convergence_tol) << "\n";
  o << "record_trajectory = " << (cfg.projection.record_trajectory ? "true" : "false") << "\n";
  o << "kernel.samples = " << cfg.kernel.n_samples << "\n";
  o << "kernel.subsample_k = " << cfg.kernel.subsample_k << "\n";
  o << "kernel.subsample_threshold = " << cfg.kernel.subsample_threshold << "\n";
  o << "degrade = " << (cfg.degrade_enabled ? degradation_name(cfg.degrade.kind) : "none")
    << "\n";
  o << "degrade.sigma = " << fmt(cfg.degrade.sigma) << "\n";
  o << "degrade.factor = " << fmt(cfg.degrade.factor) << "\n";
  o << "degrade.coverage = " << fmt(cfg.degrade.coverage) << "\n";
  o << "degrade.count = " << cfg.degrade.count << "\n";
  o << "degrade.strength = " << fmt(cfg.degrade.strength) << "\n";
  o << "degrade.blur_sigma = " << fmt(cfg.degrade.blur_sigma) << "\n";
  o << "degrade.alpha = " << fmt(cfg.degrade.alpha) << "\n";
  o << "degrade.elastic_sigma = " << fmt(cfg.degrade.elastic_sigma) << "\n";
  o << "degrade.seed = " << cfg.degrade.seed << "\n";
  o << "count = " << cfg.count << "\n";
  return o.str();
}

}  // namespace mppm
