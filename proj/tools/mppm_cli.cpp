#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "mppm.h"

namespace {

struct Options {
  std::string config, seed, out, checkpoint;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value configuration file");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  cmd->add_option("--override", o.overrides, "key=value setting, highest precedence");
}

std::string trimmed(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

int die(mppm_config* cfg, int code) {
  std::fprintf(stderr, "error: %s\n", mppm_last_error());
  mppm_config_destroy(cfg);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint manifold model: train, restore, generate, evaluate"};
  app.require_subcommand(1);
  Options o;

  struct Sub {
    const char* name;
    const char* mode;
    const char* help;
  };
  const Sub subs[] = {
      {"train", "train", "train a model on the configured dataset"},
      {"reconstruct", "reconstruct", "restore inputs with the projection loop"},
      {"generate", "generate", "draw samples by projecting noise"},
      {"evaluate", "evaluate", "compare restoration methods over degradations"},
      {"gradcheck", "gradcheck", "finite-difference audit of the loss gradients"},
  };
  std::vector<std::pair<CLI::App*, const char*>> mode_of;
  for (const Sub& s : subs) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, o);
    mode_of.emplace_back(cmd, s.mode);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : MPPM_ERR_CONFIG;
  }

  mppm_config* cfg = mppm_config_create();
  if (!o.config.empty() && mppm_config_load_file(cfg, o.config.c_str()) != MPPM_OK)
    return die(cfg, MPPM_ERR_CONFIG);

  for (const auto& [cmd, mode] : mode_of)
    if (cmd->parsed()) mppm_config_set(cfg, "mode", mode);
  if (!o.seed.empty()) mppm_config_set(cfg, "seed", o.seed.c_str());
  if (!o.out.empty()) mppm_config_set(cfg, "out", o.out.c_str());
  if (!o.checkpoint.empty()) mppm_config_set(cfg, "checkpoint", o.checkpoint.c_str());
  for (const std::string& ov : o.overrides) {
    size_t eq = ov.find('=');
    std::string key = eq == std::string::npos ? "" : trimmed(ov.substr(0, eq));
    if (key.empty()) {
      std::fprintf(stderr, "error: override must look like key=value: %s\n", ov.c_str());
      mppm_config_destroy(cfg);
      return MPPM_ERR_CONFIG;
    }
    mppm_config_set(cfg, key.c_str(), trimmed(ov.substr(eq + 1)).c_str());
  }

  if (int rc = mppm_run(cfg); rc != MPPM_OK) return die(cfg, rc);
  mppm_config_destroy(cfg);
  return MPPM_OK;
}
