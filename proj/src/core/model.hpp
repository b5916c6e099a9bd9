#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "core/nn.hpp"

namespace mppm {

// Which space the distance network measures in: ambient (with the shift loop
// running on data points) or latent (the autoencoder bottleneck).
enum class Space { ambient, latent };

std::string space_name(Space s);
Space space_from_name(const std::string& name);

struct NetSpec {
  std::vector<int> sizes;
  std::vector<Activation> activations;
  std::vector<double> dropout;  // empty means all zero
};

struct ArchitectureSpec {
  NetSpec encoder;
  NetSpec decoder;
  NetSpec distance;
  Space space = Space::ambient;
  double sigma_d = 0.25;
  double sigma_ker = 0.1;

  int ambient_dim() const { return encoder.sizes.front(); }
  int latent_dim() const { return encoder.sizes.back(); }
  void validate() const;
};

// Standard stacks: leaky-relu hidden layers, identity heads; the decoder can
// close with a sigmoid for pixel data. Distance nets take dropout on hidden
// layers only.
NetSpec mlp_spec(const std::vector<int>& sizes, Activation final_act = Activation::identity,
                 double hidden_dropout = 0.0);

struct ManifoldModel {
  MlpNetwork encoder;
  MlpNetwork decoder;
  MlpNetwork distance_net;
  Space space = Space::ambient;
  double sigma_d = 0.25;
  double sigma_ker = 0.1;

  int ambient_dim() const { return encoder.input_size(); }
  int latent_dim() const { return encoder.output_size(); }
  int distance_input_dim() const { return distance_net.input_size(); }

  Vec encode(std::span<const double> x) const { return encoder.forward_eval(x); }
  Vec decode(std::span<const double> z) const { return decoder.forward_eval(z); }
  Vec autoencode(std::span<const double> x) const { return decode(encode(x)); }
};

ManifoldModel build_model(const ArchitectureSpec& spec, uint64_t seed);

// Eval-mode distance and its input gradient.
double distance(const ManifoldModel& m, std::span<const double> p);
Vec distance_gradient(const ManifoldModel& m, std::span<const double> p);
// Gradient scaled to unit length; throws DegenerateGradient below the floor.
Vec normalized_descent_direction(const ManifoldModel& m, std::span<const double> p);

inline constexpr double kGradientFloor = 1e-8;

// A checkpoint is a directory: one file per network plus a manifest of
// hyperparameters and dimensions.
void save_model(const std::filesystem::path& dir, const ManifoldModel& m,
                const std::map<std::string, std::string>& extra_manifest = {});
ManifoldModel load_model(const std::filesystem::path& dir,
                         std::map<std::string, std::string>* manifest_out = nullptr);

}  // namespace mppm
