#include "core/model.hpp"

#include <fstream>
#include <sstream>

namespace mppm {

std::string space_name(Space s) { return s == Space::ambient ? "ambient" : "latent"; }

Space space_from_name(const std::string& name) {
  if (name == "ambient") return Space::ambient;
  if (name == "latent") return Space::latent;
  throw ConfigError("unknown space: " + name);
}

void ArchitectureSpec::validate() const {
  if (encoder.sizes.size() < 2 || decoder.sizes.size() < 2 || distance.sizes.size() < 2)
    throw ConfigError("every network needs at least one layer");
  if (encoder.sizes.back() != decoder.sizes.front())
    throw ConfigError("decoder input must match the latent dimension");
  if (decoder.sizes.back() != encoder.sizes.front())
    throw ConfigError("decoder output must match the ambient dimension");
  if (distance.sizes.back() != 1) throw ConfigError("distance network must output a scalar");
  int want = space == Space::ambient ? encoder.sizes.front() : encoder.sizes.back();
  if (distance.sizes.front() != want)
    throw ConfigError("distance input must match the " + space_name(space) + " dimension");
  if (sigma_d <= 0.0 || sigma_ker <= 0.0) throw ConfigError("kernel widths must be positive");
}

NetSpec mlp_spec(const std::vector<int>& sizes, Activation final_act, double hidden_dropout) {
  NetSpec s;
  s.sizes = sizes;
  s.activations.assign(sizes.size() - 1, Activation::relu);
  s.activations.back() = final_act;
  s.dropout.assign(sizes.size() - 1, hidden_dropout);
  s.dropout.back() = 0.0;
  return s;
}

ManifoldModel build_model(const ArchitectureSpec& spec, uint64_t seed) {
  spec.validate();
  ManifoldModel m;
  Rng enc_rng = Rng::keyed(seed, "init/encoder");
  Rng dec_rng = Rng::keyed(seed, "init/decoder");
  Rng dis_rng = Rng::keyed(seed, "init/distance");
  m.encoder = make_mlp(spec.encoder.sizes, spec.encoder.activations, spec.encoder.dropout, enc_rng);
  m.decoder = make_mlp(spec.decoder.sizes, spec.decoder.activations, spec.decoder.dropout, dec_rng);
  m.distance_net =
      make_mlp(spec.distance.sizes, spec.distance.activations, spec.distance.dropout, dis_rng);
  m.space = spec.space;
  m.sigma_d = spec.sigma_d;
  m.sigma_ker = spec.sigma_ker;
  m.encoder.seed_dropout(seed ^ 0xe1c0de5ULL);
  m.decoder.seed_dropout(seed ^ 0xdec0de5ULL);
  m.distance_net.seed_dropout(seed ^ 0xd157a9ceULL);
  return m;
}

double distance(const ManifoldModel& m, std::span<const double> p) {
  return m.distance_net.forward_eval(p)[0];
}

Vec distance_gradient(const ManifoldModel& m, std::span<const double> p) {
  auto tr = m.distance_net.forward_traced(p, Mode::eval, nullptr);
  Vec one = {1.0};
  return m.distance_net.backward(tr, one, nullptr);
}

Vec normalized_descent_direction(const ManifoldModel& m, std::span<const double> p) {
  Vec g = distance_gradient(m, p);
  double n = norm(g);
  if (n < kGradientFloor)
    throw DegenerateGradient("distance gradient norm " + std::to_string(n) +
                             " below floor at query point");
  for (double& v : g) v /= n;
  return g;
}

static std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss.precision(17);
  ss << v;
  return ss.str();
}

void save_model(const std::filesystem::path& dir, const ManifoldModel& m,
                const std::map<std::string, std::string>& extra_manifest) {
  std::filesystem::create_directories(dir);
  save_network(dir / "encoder.net", m.encoder, {});
  save_network(dir / "decoder.net", m.decoder, {});
  save_network(dir / "distance.net", m.distance_net, {});
  std::ofstream f(dir / "model.manifest");
  if (!f) throw IoError("cannot write manifest in " + dir.string());
  f << "mppm-model 1\n";
  f << "space " << space_name(m.space) << "\n";
  f << "sigma_d " << fmt_double(m.sigma_d) << "\n";
  f << "sigma_ker " << fmt_double(m.sigma_ker) << "\n";
  f << "ambient_dim " << m.ambient_dim() << "\n";
  f << "latent_dim " << m.latent_dim() << "\n";
  for (const auto& [k, v] : extra_manifest) f << k << " " << v << "\n";
  if (!f) throw IoError("manifest write failed in " + dir.string());
}

ManifoldModel load_model(const std::filesystem::path& dir,
                         std::map<std::string, std::string>* manifest_out) {
  std::ifstream f(dir / "model.manifest");
  if (!f) throw IoError("cannot open manifest in " + dir.string());
  std::string line;
  if (!std::getline(f, line) || line != "mppm-model 1")
    throw IoError("bad manifest header in " + dir.string());
  std::map<std::string, std::string> kv;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto pos = line.find(' ');
    if (pos == std::string::npos) throw IoError("bad manifest line: " + line);
    kv[line.substr(0, pos)] = line.substr(pos + 1);
  }
  ManifoldModel m;
  m.encoder = load_network(dir / "encoder.net");
  m.decoder = load_network(dir / "decoder.net");
  m.distance_net = load_network(dir / "distance.net");
  try {
    m.space = space_from_name(kv.at("space"));
    m.sigma_d = std::stod(kv.at("sigma_d"));
    m.sigma_ker = std::stod(kv.at("sigma_ker"));
  } catch (const std::out_of_range&) {
    throw IoError("manifest missing required keys in " + dir.string());
  }
  int want = m.space == Space::ambient ? m.ambient_dim() : m.latent_dim();
  if (m.distance_input_dim() != want)
    throw IoError("checkpoint distance input does not match its space");
  if (manifest_out) *manifest_out = kv;
  return m;
}

}  // namespace mppm
