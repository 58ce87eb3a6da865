#pragma once
// Federated split training: per-client local epochs, aggregation of the
// shared partition set, per-round validation and run artifacts.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mucald/config.hpp"
#include "mucald/metrics.hpp"
#include "mucald/proxy_features.hpp"
#include "mucald/split_model.hpp"
#include "mucald/synth_tasks.hpp"

namespace mucald {

// A client step or aggregation failed; carries the round and client.
class RunAbort : public std::runtime_error {
 public:
  RunAbort(int round, std::size_t client, const std::string& what)
      : std::runtime_error("round " + std::to_string(round) + ", client " + std::to_string(client) +
                           ": " + what),
        round_(round),
        client_(client) {}
  int round() const { return round_; }
  std::size_t client() const { return client_; }

 private:
  int round_;
  std::size_t client_;
};

// ------------------------------------------------------------ aggregation

// Elementwise sum_i w_i theta_i / sum_i w_i. Throws DimensionError on length
// mismatch and ConfigError for empty input or non-positive weights.
std::vector<double> fedavg(const std::vector<std::vector<double>>& sets,
                           const std::vector<double>& weights);

struct AggregationReport {
  std::vector<std::uint64_t> shared_hash;         // per client, after broadcast
  std::vector<std::uint64_t> local_hash_before;   // per client
  std::vector<std::uint64_t> local_hash_after;
  std::uint64_t checksum() const { return shared_hash.empty() ? 0 : shared_hash.front(); }
};

// Averages the method's shared set across clients (weights = sample counts),
// broadcasts it, and verifies that local partitions were not touched and that
// all shared copies agree. Throws StateError for a missing client or a
// violated contract.
AggregationReport aggregate_round(const std::vector<ClientModel*>& clients,
                                  const std::vector<double>& weights, Method method);

// ------------------------------------------------------------ client data

struct ClientData {
  std::size_t id = 0;
  Dataset data;
  ProxySpec proxy_spec{default_proxy_features()};
  NormalizationStats stats;  // fitted on the training split
  std::vector<ProxyVector> train_proxy, val_proxy, test_proxy;  // normalized
};

TaskSpec client_task(const RunConfig& cfg, std::size_t client);
ClientData prepare_client(const RunConfig& cfg, std::size_t client);

// Proxy targets of arbitrary (possibly augmented) samples, normalized with
// the client's statistics.
ProxyVector client_proxy(const ClientData& c, const Tensor& image, const LabelMap& mask);

// Stacks samples into a batch. With `augment_rng` set each sample receives a
// random dihedral transform and freshly extracted proxy targets.
Batch make_batch(const ClientData& c, SplitKind split, const std::vector<std::size_t>& indices,
                 Rng* augment_rng);

// Per-client graph on the normalized training proxies and the union of the
// clients' top-k edges with cycles removed.
CausalGraph discover_client_graph(const RunConfig& cfg, const ClientData& c);
CausalGraph union_graph(const std::vector<CausalGraph>& graphs);

// ------------------------------------------------------------ run

struct ClientRoundStats {
  std::size_t client = 0;
  Family family = Family::kSingleBlob;
  LossBreakdown loss;  // mean over the round's steps
  SegMetrics val;
  ReconMetrics s1, s2;  // wire vs clean activation on validation
  std::uint64_t shared_hash = 0;
};

struct RoundReport {
  int round = 0;
  std::vector<ClientRoundStats> clients;
  std::uint64_t checksum = 0;

  double mean_iou_nb() const;
};

struct RunResult {
  std::vector<RoundReport> rounds;
  std::vector<SegMetrics> test;  // per client, after the last round
  CausalGraph shared_graph;

  double mean_test_iou_nb() const;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: no artifacts
  std::function<void(const RoundReport&)> on_round;
};

// Deterministic in (config, seed) regardless of thread count.
RunResult run(const RunConfig& cfg, const RunOptions& options = {});

// Column names of metrics.csv, in order.
const std::vector<std::string>& round_csv_columns();

// Worker count: cfg.threads (0 = one per client) capped by MUCALD_THREADS.
std::size_t worker_count(const RunConfig& cfg);

// Intercept log file names inside <out>/intercepts.
std::string intercept_file(std::size_t client, int split, std::string_view kind);
std::string intercept_ids_file(std::size_t client);

}  // namespace mucald
