#include "core/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mppm {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation: " + name);
}

static constexpr double kLeakySlope = 0.2;

double act_value(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::leaky_relu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

double act_deriv(Activation a, double x) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::leaky_relu: return x > 0.0 ? 1.0 : kLeakySlope;
    case Activation::sigmoid: {
      double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

double act_second_deriv(Activation a, double x) {
  if (a == Activation::sigmoid) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 - s) * (1.0 - 2.0 * s);
  }
  return 0.0;
}

void NetGrads::zero() {
  for (auto& l : layers) {
    std::fill(l.weights.data.begin(), l.weights.data.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

void NetGrads::add_scaled(const NetGrads& other, double scale) {
  for (size_t k = 0; k < layers.size(); ++k) {
    auto& dst = layers[k];
    const auto& src = other.layers[k];
    for (size_t i = 0; i < dst.weights.data.size(); ++i) dst.weights.data[i] += scale * src.weights.data[i];
    for (size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += scale * src.bias[i];
  }
}

size_t NetGrads::size() const {
  size_t n = 0;
  for (const auto& l : layers) n += l.weights.data.size() + l.bias.size();
  return n;
}

double& NetGrads::flat(size_t i) {
  for (auto& l : layers) {
    if (i < l.weights.data.size()) return l.weights.data[i];
    i -= l.weights.data.size();
    if (i < l.bias.size()) return l.bias[i];
    i -= l.bias.size();
  }
  throw DimensionError("gradient index out of range");
}

double NetGrads::flat(size_t i) const { return const_cast<NetGrads*>(this)->flat(i); }

double NetGrads::max_abs() const {
  double m = 0.0;
  for (const auto& l : layers) {
    for (double w : l.weights.data) m = std::max(m, std::fabs(w));
    for (double b : l.bias) m = std::max(m, std::fabs(b));
  }
  return m;
}

bool NetGrads::finite() const {
  for (const auto& l : layers) {
    for (double w : l.weights.data)
      if (!std::isfinite(w)) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

MlpNetwork::MlpNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (size_t k = 1; k < layers_.size(); ++k)
    require(layers_[k].in_size() == layers_[k - 1].out_size(), "layer sizes do not chain");
  grads_ = make_grads();
}

int MlpNetwork::input_size() const { return layers_.empty() ? 0 : layers_.front().in_size(); }
int MlpNetwork::output_size() const { return layers_.empty() ? 0 : layers_.back().out_size(); }

ForwardTrace MlpNetwork::forward_traced(std::span<const double> x, Mode mode, Rng* rng) const {
  require(static_cast<int>(x.size()) == input_size(), "forward: input size mismatch");
  ForwardTrace tr;
  tr.layers.resize(layers_.size());
  Vec cur(x.begin(), x.end());
  for (size_t k = 0; k < layers_.size(); ++k) {
    const auto& L = layers_[k];
    auto& lt = tr.layers[k];
    lt.input = cur;
    int out = L.out_size(), in = L.in_size();
    lt.preact = L.bias;
    cblas_dgemv(CblasRowMajor, CblasNoTrans, out, in, 1.0, L.weights.data.data(), in, cur.data(),
                1, 1.0, lt.preact.data(), 1);
    cur.resize(out);
    for (int o = 0; o < out; ++o) cur[o] = act_value(L.activation, lt.preact[o]);
    if (mode == Mode::train && L.dropout > 0.0) {
      require(rng != nullptr, "dropout in train mode needs an rng");
      lt.mask.resize(out);
      double keep = 1.0 - L.dropout;
      for (int o = 0; o < out; ++o) {
        lt.mask[o] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        cur[o] *= lt.mask[o];
      }
    }
  }
  tr.output = std::move(cur);
  return tr;
}

Vec MlpNetwork::forward_eval(std::span<const double> x) const {
  require(static_cast<int>(x.size()) == input_size(), "forward: input size mismatch");
  Vec cur(x.begin(), x.end());
  Vec next;
  for (const auto& L : layers_) {
    int out = L.out_size(), in = L.in_size();
    next = L.bias;
    cblas_dgemv(CblasRowMajor, CblasNoTrans, out, in, 1.0, L.weights.data.data(), in, cur.data(),
                1, 1.0, next.data(), 1);
    for (int o = 0; o < out; ++o) next[o] = act_value(L.activation, next[o]);
    cur.swap(next);
  }
  return cur;
}

Mat MlpNetwork::forward_eval_batch(const Mat& x) const {
  require(x.cols == input_size(), "forward: input size mismatch");
  Mat cur = x;
  for (const auto& L : layers_) {
    int out = L.out_size(), in = L.in_size();
    Mat next(cur.rows, out);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cur.rows, out, in, 1.0, cur.data.data(),
                in, L.weights.data.data(), in, 0.0, next.data.data(), out);
    for (int r = 0; r < cur.rows; ++r) {
      double* xo = next.row(r);
      for (int o = 0; o < out; ++o) xo[o] = act_value(L.activation, xo[o] + L.bias[o]);
    }
    cur = std::move(next);
  }
  return cur;
}

Vec MlpNetwork::backward(const ForwardTrace& trace, std::span<const double> upstream,
                         NetGrads* grads) const {
  require(trace.layers.size() == layers_.size(), "backward: trace mismatch");
  require(static_cast<int>(upstream.size()) == output_size(), "backward: upstream size mismatch");
  Vec r(upstream.begin(), upstream.end());
  for (size_t kk = layers_.size(); kk-- > 0;) {
    const auto& L = layers_[kk];
    const auto& lt = trace.layers[kk];
    int out = L.out_size(), in = L.in_size();
    Vec ru(out);
    for (int o = 0; o < out; ++o) {
      double g = r[o];
      if (!lt.mask.empty()) g *= lt.mask[o];
      ru[o] = g * act_deriv(L.activation, lt.preact[o]);
    }
    if (grads) {
      auto& gl = grads->layers[kk];
      cblas_dger(CblasRowMajor, out, in, 1.0, ru.data(), 1, lt.input.data(), 1,
                 gl.weights.data.data(), in);
      for (int o = 0; o < out; ++o) gl.bias[o] += ru[o];
    }
    Vec rprev(in, 0.0);
    cblas_dgemv(CblasRowMajor, CblasTrans, out, in, 1.0, L.weights.data.data(), in, ru.data(), 1,
                0.0, rprev.data(), 1);
    r.swap(rprev);
  }
  return r;
}

Vec MlpNetwork::directional_gradient_backward(const ForwardTrace& trace, std::span<const double> v,
                                              NetGrads* grads) const {
  require(output_size() == 1, "directional gradient needs a scalar output");
  require(static_cast<int>(v.size()) == input_size(), "directional gradient: v size mismatch");
  size_t n = layers_.size();

  // Forward tangent sweep: adot feeds the layer, udot = W adot.
  std::vector<Vec> udot(n), adot(n + 1);
  adot[0].assign(v.begin(), v.end());
  for (size_t k = 0; k < n; ++k) {
    const auto& L = layers_[k];
    const auto& lt = trace.layers[k];
    int out = L.out_size(), in = L.in_size();
    udot[k].assign(static_cast<size_t>(out), 0.0);
    cblas_dgemv(CblasRowMajor, CblasNoTrans, out, in, 1.0, L.weights.data.data(), in,
                adot[k].data(), 1, 0.0, udot[k].data(), 1);
    adot[k + 1].resize(out);
    for (int o = 0; o < out; ++o) {
      double t = act_deriv(L.activation, lt.preact[o]) * udot[k][o];
      if (!lt.mask.empty()) t *= lt.mask[o];
      adot[k + 1][o] = t;
    }
  }

  // Reverse sweep over the tangent program with adjoint pairs for (a, adot).
  Vec ra(1, 0.0), radot(1, 1.0);
  for (size_t kk = n; kk-- > 0;) {
    const auto& L = layers_[kk];
    const auto& lt = trace.layers[kk];
    int out = L.out_size(), in = L.in_size();
    Vec ru(out), rudot(out);
    for (int o = 0; o < out; ++o) {
      double m = lt.mask.empty() ? 1.0 : lt.mask[o];
      double rt = m * ra[o];        // adjoint of phi(u)
      double rtd = m * radot[o];    // adjoint of phi'(u) * udot
      double d1 = act_deriv(L.activation, lt.preact[o]);
      double d2 = act_second_deriv(L.activation, lt.preact[o]);
      ru[o] = d1 * rt + d2 * udot[kk][o] * rtd;
      rudot[o] = d1 * rtd;
    }
    if (grads) {
      auto& gl = grads->layers[kk];
      cblas_dger(CblasRowMajor, out, in, 1.0, ru.data(), 1, lt.input.data(), 1,
                 gl.weights.data.data(), in);
      cblas_dger(CblasRowMajor, out, in, 1.0, rudot.data(), 1, adot[kk].data(), 1,
                 gl.weights.data.data(), in);
      for (int o = 0; o < out; ++o) gl.bias[o] += ru[o];
    }
    Vec pra(in, 0.0), pradot(in, 0.0);
    cblas_dgemv(CblasRowMajor, CblasTrans, out, in, 1.0, L.weights.data.data(), in, ru.data(), 1,
                0.0, pra.data(), 1);
    cblas_dgemv(CblasRowMajor, CblasTrans, out, in, 1.0, L.weights.data.data(), in, rudot.data(),
                1, 0.0, pradot.data(), 1);
    ra.swap(pra);
    radot.swap(pradot);
  }
  return ra;
}

const Vec& MlpNetwork::forward(std::span<const double> x) {
  Rng* rng = mode_ == Mode::train ? &dropout_rng_ : nullptr;
  last_trace_ = forward_traced(x, mode_, rng);
  has_trace_ = true;
  return last_trace_.output;
}

Vec MlpNetwork::backward(std::span<const double> upstream) {
  if (!has_trace_) throw StateError("backward called before forward");
  return backward(last_trace_, upstream, &grads_);
}

void MlpNetwork::zero_grads() { grads_.zero(); }

NetGrads MlpNetwork::make_grads() const {
  NetGrads g;
  g.layers.resize(layers_.size());
  for (size_t k = 0; k < layers_.size(); ++k) {
    g.layers[k].weights = Mat(layers_[k].out_size(), layers_[k].in_size());
    g.layers[k].bias.assign(layers_[k].out_size(), 0.0);
  }
  return g;
}

size_t MlpNetwork::parameter_count() const {
  size_t n = 0;
  for (const auto& l : layers_) n += l.weights.data.size() + l.bias.size();
  return n;
}

double& MlpNetwork::param(size_t i) {
  for (auto& l : layers_) {
    if (i < l.weights.data.size()) return l.weights.data[i];
    i -= l.weights.data.size();
    if (i < l.bias.size()) return l.bias[i];
    i -= l.bias.size();
  }
  throw DimensionError("parameter index out of range");
}

double MlpNetwork::param(size_t i) const { return const_cast<MlpNetwork*>(this)->param(i); }

MlpNetwork make_mlp(const std::vector<int>& sizes, const std::vector<Activation>& activations,
                    const std::vector<double>& dropout, Rng& rng) {
  require(sizes.size() >= 2, "mlp needs at least one layer");
  require(activations.size() == sizes.size() - 1, "one activation per layer");
  require(dropout.empty() || dropout.size() == sizes.size() - 1, "one dropout rate per layer");
  std::vector<DenseLayer> layers(sizes.size() - 1);
  for (size_t k = 0; k < layers.size(); ++k) {
    int in = sizes[k], out = sizes[k + 1];
    auto& L = layers[k];
    L.weights = Mat(out, in);
    L.bias.assign(out, 0.0);
    L.activation = activations[k];
    L.dropout = dropout.empty() ? 0.0 : dropout[k];
    double bound = std::sqrt(6.0 / in);
    for (double& w : L.weights.data) w = rng.uniform(-bound, bound);
  }
  return MlpNetwork(std::move(layers));
}

AdamState::AdamState(size_t param_count, AdamConfig cfg)
    : cfg_(cfg), m_(param_count, 0.0), v_(param_count, 0.0) {}

void AdamState::step(MlpNetwork& net, const NetGrads& grads) {
  require(net.parameter_count() == m_.size(), "adam: parameter count mismatch");
  require(grads.size() == m_.size(), "adam: gradient count mismatch");
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < m_.size(); ++i) {
    double& theta = net.param(i);
    double g = grads.flat(i) + cfg_.weight_decay * theta;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    double mhat = m_[i] / bc1;
    double vhat = v_[i] / bc2;
    theta -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

double fd_rel_err(double a, double b) {
  double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

namespace {

// Activation sign pattern over a forward pass; differing patterns between the
// two FD evaluations mean a kink was crossed and the central difference is
// unreliable there.
std::vector<uint8_t> sign_pattern(const MlpNetwork& net, std::span<const double> x) {
  std::vector<uint8_t> pat;
  Vec cur(x.begin(), x.end());
  for (const auto& L : net.layers()) {
    int out = L.out_size(), in = L.in_size();
    Vec next(out);
    for (int o = 0; o < out; ++o) {
      double u = L.bias[o] + dot({L.weights.row(o), static_cast<size_t>(in)}, cur);
      if (L.activation == Activation::relu || L.activation == Activation::leaky_relu)
        pat.push_back(u > 0.0 ? 1 : 0);
      next[o] = act_value(L.activation, u);
    }
    cur.swap(next);
  }
  return pat;
}

}  // namespace

GradCheckReport finite_diff_check(MlpNetwork& net, LossFn loss_fn, const void* loss_ctx,
                                  std::span<const double> x, double h, double tol) {
  GradCheckReport rep;
  ForwardTrace tr = net.forward_traced(x, Mode::eval, nullptr);
  auto [value, dout] = loss_fn(tr.output, loss_ctx);
  (void)value;
  NetGrads analytic = net.make_grads();
  net.backward(tr, dout, &analytic);

  size_t n = net.parameter_count();
  for (size_t i = 0; i < n; ++i) {
    double saved = net.param(i);
    net.param(i) = saved + h;
    double vp = loss_fn(net.forward_eval(x), loss_ctx).first;
    auto pat_p = sign_pattern(net, x);
    net.param(i) = saved - h;
    double vm = loss_fn(net.forward_eval(x), loss_ctx).first;
    auto pat_m = sign_pattern(net, x);
    net.param(i) = saved;
    bool kink = pat_p != pat_m;
    double numeric = (vp - vm) / (2.0 * h);
    double a = analytic.flat(i);
    if (kink) {
      ++rep.kinks_skipped;
      continue;
    }
    double re = fd_rel_err(a, numeric);
    ++rep.checked;
    if (re > rep.max_rel_err) {
      rep.max_rel_err = re;
      rep.worst = {0, i, a, numeric, re, false};
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

void save_network(const std::filesystem::path& path, const MlpNetwork& net,
                  const std::map<std::string, std::string>& meta) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f << "mppm-network 1\n";
  f << "layers " << net.layers().size() << "\n";
  for (size_t k = 0; k < net.layers().size(); ++k) {
    const auto& L = net.layers()[k];
    f << "layer " << k << " " << L.in_size() << " " << L.out_size() << " "
      << activation_name(L.activation) << " " << L.dropout << "\n";
  }
  for (const auto& [key, val] : meta) f << "meta " << key << " " << val << "\n";
  f << "end-header\n";
  for (const auto& L : net.layers()) {
    static_assert(sizeof(double) == 8);
    f.write(reinterpret_cast<const char*>(L.weights.data.data()),
            static_cast<std::streamsize>(L.weights.data.size() * 8));
    f.write(reinterpret_cast<const char*>(L.bias.data()),
            static_cast<std::streamsize>(L.bias.size() * 8));
  }
  if (!f) throw IoError("write failed: " + path.string());
}

MlpNetwork load_network(const std::filesystem::path& path,
                        std::map<std::string, std::string>* meta_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "mppm-network 1")
    throw IoError("bad network header: " + path.string());
  size_t nlayers = 0;
  std::vector<DenseLayer> layers;
  while (std::getline(f, line)) {
    if (line == "end-header") break;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "layers") {
      ss >> nlayers;
    } else if (tag == "layer") {
      size_t idx;
      int in, out;
      std::string act;
      double drop;
      ss >> idx >> in >> out >> act >> drop;
      if (!ss) throw IoError("bad layer line: " + path.string());
      DenseLayer L;
      L.weights = Mat(out, in);
      L.bias.assign(out, 0.0);
      L.activation = activation_from_name(act);
      L.dropout = drop;
      layers.push_back(std::move(L));
    } else if (tag == "meta") {
      std::string key;
      ss >> key;
      std::string val;
      std::getline(ss, val);
      if (!val.empty() && val.front() == ' ') val.erase(val.begin());
      if (meta_out) (*meta_out)[key] = val;
    } else {
      throw IoError("unknown header tag '" + tag + "' in " + path.string());
    }
  }
  if (layers.size() != nlayers) throw IoError("layer count mismatch: " + path.string());
  for (auto& L : layers) {
    f.read(reinterpret_cast<char*>(L.weights.data.data()),
           static_cast<std::streamsize>(L.weights.data.size() * 8));
    f.read(reinterpret_cast<char*>(L.bias.data()), static_cast<std::streamsize>(L.bias.size() * 8));
  }
  if (!f) throw IoError("truncated parameter block: " + path.string());
  return MlpNetwork(std::move(layers));
}

}  // namespace mppm
