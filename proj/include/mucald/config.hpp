#pragma once
// Run configuration and its INI representation.
//
// Sections: [run] [model] [loss] [diffusion] [notears] [ablation]. Unknown
// sections or keys are rejected; every error message starts with the
// "section.key" path.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mucald/causal_discovery.hpp"
#include "mucald/objective.hpp"

namespace mucald {

enum class Method {
  kMucald,    // local FE/BE, shared SS + CRDM + discriminators
  kBaseline,  // plain SplitFed: no CRDM/DACA, FE/SS/BE all averaged
};

enum class Ablation {
  kNone,
  kCrdmOnly,        // no discriminators
  kDacaOnly,        // no CRDM
  kNoCausality,     // SCM without graph edges
  kNoDiffusion,     // wire = activation, no denoiser
  kNoForwardNoise,  // denoiser sees the clean activation
};

std::string_view ablation_name(Ablation a);  // "none", "crdm-only", ...
// Accepts the CLI spelling (crdm-only) and the INI key (crdm_only).
Ablation parse_ablation(std::string_view name);
std::string_view method_name(Method m);

struct ModelConfig {
  std::size_t fe_width1 = 8;
  std::size_t fe_width2 = 16;
  std::size_t ss_width = 16;
  std::size_t be_width = 8;
  std::size_t d_u = 16;
  std::size_t enc_hidden = 32;
  std::size_t scm_hidden = 8;
  std::size_t den_hidden = 16;
  std::size_t time_dim = 8;
  std::size_t disc_hidden = 16;
  bool quantize_wire = true;  // float32 round trip at each split
};

struct DiffusionConfig {
  int steps = 100;
  double offset = 0.008;
  int train_t_max = 50;  // training timesteps drawn uniformly from [1, train_t_max]
  int eval_t = 25;       // fixed timestep for evaluation and intercepts
};

struct RunConfig {
  Method method = Method::kMucald;
  int rounds = 24;
  int local_epochs = 5;
  std::size_t clients = 5;
  std::size_t batch_size = 8;
  std::size_t image_size = 32;
  std::size_t train = 200;
  std::size_t val = 36;
  std::size_t test = 40;
  double noise = 0.05;
  std::uint64_t seed = 0;
  std::size_t steps_per_epoch = 0;  // 0: one full pass over the training set
  bool augment = true;
  std::vector<std::size_t> intercept_clients = {0};
  std::size_t threads = 0;  // 0: one per client, capped by MUCALD_THREADS

  ModelConfig model;
  LossWeights loss;
  int warmup_epochs = 2;
  int rampup_epochs = 3;
  double alpha_max = 1.0;
  double lr = 1e-3;
  DiffusionConfig diffusion;
  NotearsConfig notears;
  NotearsVariant notears_variant = NotearsVariant::kMlp;
  std::vector<std::string> proxy_features;  // empty: default set
  Ablation ablation = Ablation::kNone;

  // Throws ConfigError naming the offending field.
  void validate() const;

  bool crdm_enabled() const;
  bool daca_enabled() const;
  bool causal_edges() const;
  bool diffusion_enabled() const;
  bool forward_noise() const;
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);
// Writes every field, so the output parses back to an equal configuration.
void write_config(std::ostream& out, const RunConfig& cfg);

}  // namespace mucald
