#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace mppm {

enum class Activation { identity, relu, leaky_relu, sigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

double act_value(Activation a, double x);
double act_deriv(Activation a, double x);
double act_second_deriv(Activation a, double x);

enum class Mode { train, eval };

struct DenseLayer {
  Mat weights;  // [out x in], row o holds the fan-in of unit o
  Vec bias;     // [out]
  Activation activation = Activation::identity;
  double dropout = 0.0;

  int in_size() const { return weights.cols; }
  int out_size() const { return weights.rows; }
};

struct LayerGrads {
  Mat weights;
  Vec bias;
};

struct NetGrads {
  std::vector<LayerGrads> layers;

  void zero();
  void add_scaled(const NetGrads& other, double scale);
  size_t size() const;
  double& flat(size_t i);
  double flat(size_t i) const;
  double max_abs() const;
  bool finite() const;
};

struct LayerTrace {
  Vec input;   // layer input after the previous layer's dropout
  Vec preact;  // W x + b
  Vec mask;    // inverted dropout scale per unit; empty when inactive
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Vec output;
};

class MlpNetwork {
 public:
  MlpNetwork() = default;
  explicit MlpNetwork(std::vector<DenseLayer> layers);

  int input_size() const;
  int output_size() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  // Dropout draws only happen in train mode on layers with a positive rate;
  // rng may be null otherwise.
  ForwardTrace forward_traced(std::span<const double> x, Mode mode, Rng* rng) const;
  Vec forward_eval(std::span<const double> x) const;
  // Rows of x as inputs, rows of the result as outputs; eval mode.
  Mat forward_eval_batch(const Mat& x) const;

  // Accumulates parameter gradients into grads (if given) and returns dL/dx.
  Vec backward(const ForwardTrace& trace, std::span<const double> upstream, NetGrads* grads) const;

  // For scalar-output nets: gradients of the directional derivative
  // J(x, theta) = v . grad_x net(x). Accumulates dJ/dtheta into grads (if
  // given) and returns dJ/dx, i.e. the Hessian-vector product H v. Dropout
  // masks recorded in the trace are treated as constants.
  Vec directional_gradient_backward(const ForwardTrace& trace, std::span<const double> v,
                                    NetGrads* grads) const;

  // Stateful convenience surface: forward stores a trace, backward consumes it
  // and accumulates into the owned gradient buffer.
  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }
  void seed_dropout(uint64_t seed) { dropout_rng_ = Rng::keyed(seed, {0x64726f70ULL}); }
  const Vec& forward(std::span<const double> x);
  Vec backward(std::span<const double> upstream);
  NetGrads& grads() { return grads_; }
  const NetGrads& grads() const { return grads_; }
  void zero_grads();

  NetGrads make_grads() const;
  size_t parameter_count() const;
  double& param(size_t i);
  double param(size_t i) const;

 private:
  std::vector<DenseLayer> layers_;
  Mode mode_ = Mode::eval;
  Rng dropout_rng_{0x64726f70ULL};
  ForwardTrace last_trace_;
  bool has_trace_ = false;
  NetGrads grads_;
};

// He-uniform init scaled by fan-in; dropout list may be empty (all zero) or
// one rate per layer.
MlpNetwork make_mlp(const std::vector<int>& sizes, const std::vector<Activation>& activations,
                    const std::vector<double>& dropout, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(size_t param_count, AdamConfig cfg);
  void step(MlpNetwork& net, const NetGrads& grads);
  int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  Vec m_, v_;
  int64_t t_ = 0;
};

struct GradCheckEntry {
  int layer = 0;
  size_t index = 0;  // flat index within the network
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool kink = false;
};

struct GradCheckReport {
  double max_rel_err = 0.0;   // over non-kink parameters
  size_t checked = 0;
  size_t kinks_skipped = 0;
  bool pass = false;
  GradCheckEntry worst;
};

// loss_fn maps the net output to (value, d value / d output).
using LossFn = std::pair<double, Vec> (*)(std::span<const double> output, const void* ctx);

GradCheckReport finite_diff_check(MlpNetwork& net, LossFn loss_fn, const void* loss_ctx,
                                  std::span<const double> x, double h, double tol);

// Generic parameter-space check used for composite losses. value_fn must be
// deterministic; analytic holds d value / d theta in flat order.
struct FlatParamCheck {
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t kinks_skipped = 0;
  bool pass = false;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

double fd_rel_err(double a, double b);

void save_network(const std::filesystem::path& path, const MlpNetwork& net,
                  const std::map<std::string, std::string>& meta);
MlpNetwork load_network(const std::filesystem::path& path,
                        std::map<std::string, std::string>* meta_out = nullptr);

}  // namespace mppm
