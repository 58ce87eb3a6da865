#pragma once
// Split-point leakage probes: a reconstruction attack on intercepted frames and
// a loss-threshold membership-inference test.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mucald/frame.hpp"
#include "mucald/metrics.hpp"
#include "mucald/nn.hpp"
#include "mucald/runtime.hpp"

namespace mucald {

// Frames captured at one split point, paired with the source sample ids.
struct InterceptLog {
  int split = 1;
  std::vector<ActivationFrame> frames;
  std::vector<std::uint64_t> image_ids;
};

// Reads <dir>/intercepts/client<k>_split<s>_<kind>.frames and the id table.
// Throws DataError for missing or inconsistent files.
InterceptLog read_intercepts(const std::filesystem::path& run_dir, std::size_t client, int split,
                             std::string_view kind);

struct AttackConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  std::size_t hidden = 16;
  std::uint64_t seed = 0;
  bool shuffle_pairs = false;  // negative control: permute (frame, image) pairs
  std::size_t min_intercepts = 100;
};

struct ReconStats {
  ReconMetrics mean, std;
  std::size_t count = 0;
};

ReconStats summarize(const std::vector<ReconMetrics>& per_sample);

// Conv decoder from a [C, h, w] payload to a [1, S, S] image (h = S or S/2).
class AttackDecoder {
 public:
  AttackDecoder(std::size_t channels, std::size_t hidden, bool upsample, std::uint64_t seed);
  Tensor forward(const Tensor& z) { return net_.forward(z); }
  Tensor backward(const Tensor& g) { return net_.backward(g); }
  std::vector<ParamRef> parameters() { return net_.parameters(); }

 private:
  Sequential net_{"attack"};
};

struct AttackSet {
  std::vector<Tensor> inputs;   // [C, h, w] payloads
  std::vector<Tensor> targets;  // [1, S, S] images
};

// Trains a decoder with MSE for a fixed step budget. Throws DataError when
// fewer than cfg.min_intercepts training pairs are given.
AttackDecoder train_attack_decoder(const AttackSet& train, const AttackConfig& cfg);

std::vector<Tensor> reconstruct(AttackDecoder& decoder, const std::vector<Tensor>& inputs);

struct AttackReport {
  int split = 1;
  bool obfuscation = true;
  std::size_t train_count = 0;
  ReconStats attack;        // decoder output vs true held-out image
  ReconStats mean_image;    // mean training image vs true held-out image
  ReconStats shuffled;      // decoder trained on permuted pairs
  ReconStats fidelity;      // wire vs clean payload
  ReconStats raw_noisy;     // noisy vs clean payload
  double mia_auc = -1.0;    // < 0 when not measured

  std::string to_json() const;
};

// Replays a finished run's intercepts for one client. Training pairs come from
// the train and val splits, held-out pairs from the test split. With
// obfuscation the decoder sees the wire stream, otherwise the clean one.
AttackReport attack_run(const std::filesystem::path& run_dir, std::size_t client, int split,
                        bool obfuscation, const AttackConfig& cfg,
                        std::vector<Tensor>* reconstructions = nullptr);

// Probability that a random member scores higher than a random non-member
// (ties count half). Throws DataError for empty inputs.
double auc(const std::vector<double>& member_scores, const std::vector<double>& nonmember_scores);

// Loss-threshold membership inference: score = -per-sample soft-dice loss in
// evaluation mode, members expected to score higher.
double membership_inference(ClientModel& model, const ClientData& data,
                            const std::vector<std::size_t>& members,
                            const std::vector<std::size_t>& holdout, const RunConfig& cfg,
                            std::uint64_t seed);

// A finished run's configuration, data and trained model for one client.
struct LoadedClient {
  RunConfig cfg;
  ClientData data;
  std::unique_ptr<ClientModel> model;
};
LoadedClient load_client(const std::filesystem::path& run_dir, std::size_t client);

}  // namespace mucald
