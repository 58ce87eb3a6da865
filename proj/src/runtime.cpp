#include "mucald/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "mucald/checkpoint.hpp"
#include "mucald/errors.hpp"

namespace mucald {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (auto p : parts) h = splitmix(h ^ splitmix(p));
  return h;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Client {
  ClientData data;
  std::unique_ptr<ClientModel> model;
  std::unique_ptr<ClientOptimizers> opt;
  Rng rng;
  std::uint64_t seed = 0;
};

struct EvalResult {
  SegMetrics seg;
  ReconMetrics s1, s2;
};

ReconMetrics weighted_mean(const std::vector<std::pair<ReconMetrics, double>>& parts) {
  ReconMetrics m;
  double total = 0.0;
  for (const auto& [r, w] : parts) {
    m.mse += w * r.mse;
    m.psnr += w * r.psnr;
    m.ssim += w * r.ssim;
    total += w;
  }
  if (total > 0.0) {
    m.mse /= total;
    m.psnr /= total;
    m.ssim /= total;
  }
  return m;
}

std::vector<std::vector<std::size_t>> chunks(std::size_t n, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + size); ++i) idx.push_back(i);
    out.push_back(std::move(idx));
  }
  return out;
}

StepOptions eval_options(const RunConfig& cfg, std::uint64_t seed, int round, std::size_t chunk) {
  StepOptions o;
  o.weights = cfg.loss;
  o.train = false;
  o.t1 = o.t2 = cfg.diffusion.eval_t;
  o.noise_seed = mix({seed, static_cast<std::uint64_t>(round), 0xE7A1, chunk});
  o.round = static_cast<std::uint32_t>(round);
  o.quantize = cfg.model.quantize_wire;
  return o;
}

EvalResult evaluate(Client& c, const RunConfig& cfg, SplitKind split, int round,
                    const DiffusionSchedule& sched) {
  const auto& samples = c.data.data.split(split);
  const std::size_t classes = c.data.data.classes();
  std::vector<SegMetrics> per_sample;
  std::vector<std::pair<ReconMetrics, double>> r1, r2;
  std::size_t chunk_id = 0;
  for (const auto& idx : chunks(samples.size(), cfg.batch_size)) {
    const Batch batch = make_batch(c.data, split, idx, nullptr);
    const StepResult res =
        c.model->run(batch, eval_options(cfg, c.seed ^ static_cast<std::uint64_t>(split), round,
                                         chunk_id++),
                     sched, false);
    const auto pred = argmax_labels(res.probs);
    const std::size_t S = cfg.image_size;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      LabelMap p(S, S);
      std::copy(pred.begin() + static_cast<std::ptrdiff_t>(i * S * S),
                pred.begin() + static_cast<std::ptrdiff_t>((i + 1) * S * S), p.labels.begin());
      per_sample.push_back(seg_metrics(p, samples[idx[i]].mask, classes));
    }
    r1.emplace_back(recon_metrics(res.s1.clean, res.s1.wire), static_cast<double>(idx.size()));
    r2.emplace_back(recon_metrics(res.s2.clean, res.s2.wire), static_cast<double>(idx.size()));
  }
  return {mean_metrics(per_sample), weighted_mean(r1), weighted_mean(r2)};
}

LossBreakdown train_round(Client& c, const RunConfig& cfg, int round,
                          const DiffusionSchedule& sched) {
  const std::size_t n = c.data.data.train.size();
  const std::size_t full_steps = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : full_steps;
  std::vector<double> sums(LossBreakdown::column_names().size(), 0.0);
  std::size_t count = 0;
  std::vector<std::size_t> order(n);
  for (int e = 1; e <= cfg.local_epochs; ++e) {
    ScheduleState s;
    s.round = round;
    s.epoch = (round - 1) * cfg.local_epochs + e;
    s.warmup_epochs = cfg.warmup_epochs;
    s.rampup_epochs = cfg.rampup_epochs;
    StepOptions o;
    o.weights = effective_weights(s, cfg.loss);
    o.alpha = cfg.alpha_max * s.ramp();
    o.t_max = cfg.diffusion.train_t_max;
    o.round = static_cast<std::uint32_t>(round);
    o.quantize = cfg.model.quantize_wire;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), c.rng);
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < std::min(cfg.batch_size, n); ++i) {
        idx.push_back(order[(step * cfg.batch_size + i) % n]);
      }
      if (cfg.steps_per_epoch == 0 && step + 1 == steps && n % cfg.batch_size != 0) {
        idx.resize(n % cfg.batch_size);
      }
      const Batch batch = make_batch(c.data, SplitKind::kTrain, idx, cfg.augment ? &c.rng : nullptr);
      o.noise_seed = mix({c.seed, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(e), step});
      const StepResult r = c.model->run(batch, o, sched, true);
      if (!std::isfinite(r.loss.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(e) + ", step " +
                           std::to_string(step));
      }
      c.opt->step();
      const auto cols = r.loss.columns();
      for (std::size_t i = 0; i < cols.size(); ++i) sums[i] += cols[i];
      ++count;
    }
  }
  LossBreakdown mean;
  double* fields[] = {&mean.seg,  &mean.proxy1, &mean.proxy2, &mean.diff1, &mean.diff2,
                      &mean.klu,  &mean.klz,    &mean.adv1,   &mean.adv2,  &mean.total};
  for (std::size_t i = 0; i < sums.size(); ++i) *fields[i] = sums[i] / static_cast<double>(count);
  return mean;
}

// Runs fn(k) for every client on up to `workers` threads; rethrows the first
// failure in client order.
void for_each_client(std::size_t clients, std::size_t workers,
                     const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(clients);
  auto worker = [&](std::size_t w) {
    for (std::size_t k = w; k < clients; k += workers) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void dump_abort_frames(const std::filesystem::path& out_dir, int round, std::size_t client,
                       const ClientModel& model) {
  if (out_dir.empty()) return;
  const auto dir = out_dir / "abort";
  std::filesystem::create_directories(dir);
  const auto& frames = model.last_frames();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_text(dir / ("round" + std::to_string(round) + "_client" + std::to_string(client) +
                      "_split" + std::to_string(i + 1) + ".frame"),
               frames[i]);
  }
}

void write_intercepts(Client& c, const RunConfig& cfg, int round, const DiffusionSchedule& sched,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t k = c.data.id;
  std::array<std::array<std::string, 3>, 2> streams;  // [split][clean, noisy, wire]
  std::string ids = "frame,split,index,id\n";
  std::size_t frame_no = 0;
  const std::array<std::pair<SplitKind, const char*>, 3> splits = {
      {{SplitKind::kTrain, "train"}, {SplitKind::kVal, "val"}, {SplitKind::kTest, "test"}}};
  for (auto [split, name] : splits) {
    const auto& samples = c.data.data.split(split);
    std::size_t chunk_id = 0;
    for (const auto& idx : chunks(samples.size(), cfg.batch_size)) {
      const Batch batch = make_batch(c.data, split, idx, nullptr);
      const StepResult res = c.model->run(
          batch, eval_options(cfg, c.seed ^ 0x1A7E, round, 1000 * static_cast<std::size_t>(split) + chunk_id++),
          sched, false);
      for (int s = 0; s < 2; ++s) {
        const SplitTrace& tr = s == 0 ? res.s1 : res.s2;
        const Tensor& noisy = tr.noisy.size() ? tr.noisy : tr.clean;
        const Tensor* kinds[3] = {&tr.clean, &noisy, &tr.wire};
        const std::size_t per = tr.clean.size() / idx.size();
        Shape one(tr.clean.shape().begin() + 1, tr.clean.shape().end());
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (int kind = 0; kind < 3; ++kind) {
            Tensor t(one);
            std::copy(kinds[kind]->data() + i * per, kinds[kind]->data() + (i + 1) * per, t.data());
            streams[s][kind] += encode_frame(make_frame(static_cast<std::uint32_t>(round),
                                                        static_cast<std::uint8_t>(k),
                                                        static_cast<std::uint8_t>(s + 1),
                                                        static_cast<std::uint16_t>(tr.t), t));
          }
        }
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        ids += std::to_string(frame_no++) + "," + name + "," + std::to_string(idx[i]) + "," +
               std::to_string(samples[idx[i]].id) + "\n";
      }
    }
  }
  static constexpr const char* kKinds[3] = {"clean", "noisy", "wire"};
  for (int s = 0; s < 2; ++s)
    for (int kind = 0; kind < 3; ++kind) {
      write_text(dir / intercept_file(k, s + 1, kKinds[kind]), streams[s][kind]);
    }
  write_text(dir / intercept_ids_file(k), ids);
}

void write_csv_row(std::string& csv, const RoundReport& r) {
  for (const auto& c : r.clients) {
    csv += std::to_string(r.round) + "," + std::to_string(c.client) + "," +
           std::string(family_name(c.family));
    for (double v : c.loss.columns()) csv += "," + fmt(v);
    for (double v : c.val.columns()) csv += "," + fmt(v);
    for (const ReconMetrics* m : {&c.s1, &c.s2}) {
      csv += "," + fmt(m->mse) + "," + fmt(m->psnr) + "," + fmt(m->ssim);
    }
    csv += "," + hex(c.shared_hash) + "\n";
  }
}

nlohmann::json metrics_json(const SegMetrics& m) {
  nlohmann::json j;
  const auto names = SegMetrics::column_names();
  const auto cols = m.columns();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = cols[i];
  return j;
}

}  // namespace

// ------------------------------------------------------------ aggregation

std::vector<double> fedavg(const std::vector<std::vector<double>>& sets,
                           const std::vector<double>& weights) {
  if (sets.empty()) throw ConfigError("fedavg: no parameter sets");
  if (weights.size() != sets.size()) {
    throw DimensionError("fedavg: " + std::to_string(sets.size()) + " sets but " +
                         std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("fedavg: weights must be > 0");
    total += w;
  }
  const std::size_t n = sets.front().size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].size() != n) {
      throw DimensionError("fedavg: set " + std::to_string(i) + " has " +
                           std::to_string(sets[i].size()) + " values, expected " + std::to_string(n));
    }
    for (std::size_t j = 0; j < n; ++j) out[j] += weights[i] * sets[i][j];
  }
  for (double& v : out) v /= total;
  return out;
}

AggregationReport aggregate_round(const std::vector<ClientModel*>& clients,
                                  const std::vector<double>& weights, Method method) {
  if (clients.empty()) throw StateError("aggregate_round: no clients");
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (!clients[k]) throw StateError("aggregate_round: client " + std::to_string(k) + " missing");
  }
  AggregationReport rep;
  std::vector<std::vector<double>> sets;
  for (auto* c : clients) {
    rep.local_hash_before.push_back(param_hash(c->local_params(method)));
    sets.push_back(flatten_params(c->shared_params(method)));
  }
  const auto avg = fedavg(sets, weights);
  for (auto* c : clients) {
    unflatten_params(c->shared_params(method), avg);
    rep.local_hash_after.push_back(param_hash(c->local_params(method)));
    rep.shared_hash.push_back(param_hash(c->shared_params(method)));
  }
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (rep.local_hash_before[k] != rep.local_hash_after[k]) {
      throw StateError("aggregate_round: local partition of client " + std::to_string(k) +
                       " changed during aggregation");
    }
    if (rep.shared_hash[k] != rep.shared_hash[0]) {
      throw StateError("aggregate_round: shared set of client " + std::to_string(k) +
                       " differs after broadcast");
    }
  }
  return rep;
}

// ------------------------------------------------------------ client data

TaskSpec client_task(const RunConfig& cfg, std::size_t client) {
  TaskSpec t;
  t.family = family_for_client(client);
  t.image_size = cfg.image_size;
  t.train = cfg.train;
  t.val = cfg.val;
  t.test = cfg.test;
  t.noise = cfg.noise;
  t.seed = mix({cfg.seed, 0xDA7A, client});
  return t;
}

ClientData prepare_client(const RunConfig& cfg, std::size_t client) {
  ClientData c;
  c.id = client;
  c.data = generate(client_task(cfg, client));
  if (!cfg.proxy_features.empty()) c.proxy_spec = ProxySpec(cfg.proxy_features);
  std::vector<ProxyVector> raw;
  for (const auto& s : c.data.train) raw.push_back(extract(s.image, s.mask, kAnyForeground, c.proxy_spec));
  auto [norm, stats] = normalize_dataset(raw);
  c.train_proxy = std::move(norm);
  c.stats = std::move(stats);
  for (const auto& s : c.data.val) c.val_proxy.push_back(client_proxy(c, s.image, s.mask));
  for (const auto& s : c.data.test) c.test_proxy.push_back(client_proxy(c, s.image, s.mask));
  return c;
}

ProxyVector client_proxy(const ClientData& c, const Tensor& image, const LabelMap& mask) {
  return normalize(extract(image, mask, kAnyForeground, c.proxy_spec), c.stats);
}

Batch make_batch(const ClientData& c, SplitKind split, const std::vector<std::size_t>& indices,
                 Rng* augment_rng) {
  const auto& samples = c.data.split(split);
  const auto& proxies = split == SplitKind::kTrain  ? c.train_proxy
                        : split == SplitKind::kVal ? c.val_proxy
                                                   : c.test_proxy;
  if (indices.empty()) throw DataError("make_batch: empty batch");
  const Shape& ishape = samples.at(indices[0]).image.shape();
  const std::size_t B = indices.size(), per = shape_numel(ishape), P = c.proxy_spec.size();
  Batch b;
  b.images = Tensor({B, ishape[0], ishape[1], ishape[2]});
  b.classes = c.data.classes();
  b.client = static_cast<std::uint8_t>(c.id);
  b.proxy.target = Tensor({B, P});
  b.proxy.valid.resize(B);
  b.labels.reserve(B * ishape[1] * ishape[2]);
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = samples.at(indices[i]);
    ProxyVector pv;
    if (augment_rng) {
      auto [img, mask] = augment(s.image, s.mask, *augment_rng);
      pv = client_proxy(c, img, mask);
      std::copy(img.data(), img.data() + per, b.images.data() + i * per);
      b.labels.insert(b.labels.end(), mask.labels.begin(), mask.labels.end());
    } else {
      pv = proxies.at(indices[i]);
      std::copy(s.image.data(), s.image.data() + per, b.images.data() + i * per);
      b.labels.insert(b.labels.end(), s.mask.labels.begin(), s.mask.labels.end());
    }
    b.proxy.valid[i] = !pv.empty_region;
    for (std::size_t j = 0; j < P; ++j) b.proxy.target.at(i, j) = pv.values[j];
  }
  return b;
}

CausalGraph discover_client_graph(const RunConfig& cfg, const ClientData& c) {
  std::vector<const ProxyVector*> rows;
  for (const auto& p : c.train_proxy) {
    if (!p.empty_region) rows.push_back(&p);
  }
  const std::size_t d = c.proxy_spec.size();
  Tensor x({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) x.at(i, j) = rows[i]->values[j];
  NotearsConfig nc = cfg.notears;
  nc.seed = mix({cfg.seed, cfg.notears.seed, 0x6EA5, c.id});
  return fit_notears(x, nc, cfg.notears_variant, c.proxy_spec.names());
}

CausalGraph union_graph(const std::vector<CausalGraph>& graphs) {
  if (graphs.empty()) throw ConfigError("union_graph: no graphs");
  CausalGraph g;
  g.d = graphs.front().d;
  g.names = graphs.front().names;
  g.weights = Tensor({g.d, g.d});
  for (const auto& cg : graphs) {
    if (cg.d != g.d) throw DimensionError("union_graph: graphs of different sizes");
    for (const auto& e : cg.edges) g.weights.at(e.src, e.dst) += std::abs(e.weight);
  }
  break_cycles(g.weights);
  std::size_t nonzero = 0;
  for (double v : g.weights.values()) nonzero += v != 0.0;
  g.edges = top_k_edges(g, nonzero);
  g.h_value = notears_h(g.weights);
  return g;
}

// ------------------------------------------------------------ run

double RoundReport::mean_iou_nb() const {
  double s = 0.0;
  for (const auto& c : clients) s += c.val.iou_nb;
  return clients.empty() ? 0.0 : s / static_cast<double>(clients.size());
}

double RunResult::mean_test_iou_nb() const {
  double s = 0.0;
  for (const auto& m : test) s += m.iou_nb;
  return test.empty() ? 0.0 : s / static_cast<double>(test.size());
}

const std::vector<std::string>& round_csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"round", "client", "family"};
    for (const auto& n : LossBreakdown::column_names()) c.push_back(n);
    for (const auto& n : SegMetrics::column_names()) c.push_back(n);
    for (const char* s : {"S1", "S2"})
      for (const char* m : {"MSE", "PSNR", "SSIM"}) c.push_back(std::string(s) + "_" + m);
    c.push_back("checksum");
    return c;
  }();
  return cols;
}

std::size_t worker_count(const RunConfig& cfg) {
  std::size_t n = cfg.threads == 0 ? cfg.clients : cfg.threads;
  if (const char* env = std::getenv("MUCALD_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(1, std::min(n, cfg.clients));
}

std::string intercept_file(std::size_t client, int split, std::string_view kind) {
  return "client" + std::to_string(client) + "_split" + std::to_string(split) + "_" +
         std::string(kind) + ".frames";
}

std::string intercept_ids_file(std::size_t client) {
  return "client" + std::to_string(client) + "_ids.csv";
}

RunResult run(const RunConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const auto& out = options.out_dir;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream ini(out / "config.ini");
    write_config(ini, cfg);
  }
  const DiffusionSchedule sched = cosine_schedule(cfg.diffusion.steps, cfg.diffusion.offset);
  const std::size_t workers = worker_count(cfg);
  const std::size_t K = cfg.clients;

  std::vector<Client> clients(K);
  std::vector<CausalGraph> graphs(K);
  for_each_client(K, workers, [&](std::size_t k) {
    clients[k].data = prepare_client(cfg, k);
    if (cfg.causal_edges()) graphs[k] = discover_client_graph(cfg, clients[k].data);
  });

  RunResult result;
  const std::size_t proxy_dim = clients[0].data.proxy_spec.size();
  std::vector<Edge> edges;
  if (cfg.causal_edges()) {
    result.shared_graph = union_graph(graphs);
    edges = result.shared_graph.edges;
    if (!out.empty()) {
      std::filesystem::create_directories(out / "graphs");
      for (std::size_t k = 0; k < K; ++k) {
        std::ofstream g(out / "graphs" / ("client" + std::to_string(k) + ".json"));
        write_graph_json(g, graphs[k]);
      }
      std::ofstream g(out / "graphs" / "shared.json");
      write_graph_json(g, result.shared_graph);
    }
  }
  const ModelSpec spec = ModelSpec::from_config(cfg, proxy_dim, edges);
  std::vector<ClientModel*> models;
  std::vector<double> weights;
  for (std::size_t k = 0; k < K; ++k) {
    auto& c = clients[k];
    c.seed = mix({cfg.seed, 0xC11E, k});
    c.rng.seed(c.seed);
    c.model = std::make_unique<ClientModel>(spec, InitSeeds::derive(cfg.seed, k));
    c.opt = std::make_unique<ClientOptimizers>(*c.model, cfg.lr);
    models.push_back(c.model.get());
    weights.push_back(static_cast<double>(c.data.data.train.size()));
  }
  // Shared copies start from one snapshot.
  aggregate_round(models, weights, cfg.method);

  std::string csv;
  for (std::size_t i = 0; i < round_csv_columns().size(); ++i) {
    csv += (i ? "," : "") + round_csv_columns()[i];
  }
  csv += "\n";

  for (int round = 1; round <= cfg.rounds; ++round) {
    RoundReport rep;
    rep.round = round;
    rep.clients.resize(K);
    for_each_client(K, workers, [&](std::size_t k) {
      try {
        rep.clients[k].loss = train_round(clients[k], cfg, round, sched);
      } catch (const RunAbort&) {
        throw;
      } catch (const std::exception& e) {
        dump_abort_frames(out, round, k, *clients[k].model);
        throw RunAbort(round, k, e.what());
      }
    });
    AggregationReport agg;
    try {
      agg = aggregate_round(models, weights, cfg.method);
    } catch (const std::exception& e) {
      throw RunAbort(round, 0, std::string("aggregation: ") + e.what());
    }
    rep.checksum = agg.checksum();
    for_each_client(K, workers, [&](std::size_t k) {
      EvalResult ev;
      try {
        ev = evaluate(clients[k], cfg, SplitKind::kVal, round, sched);
      } catch (const std::exception& e) {
        throw RunAbort(round, k, std::string("validation: ") + e.what());
      }
      auto& st = rep.clients[k];
      st.client = k;
      st.family = clients[k].data.data.spec.family;
      st.val = ev.seg;
      st.s1 = ev.s1;
      st.s2 = ev.s2;
      st.shared_hash = agg.shared_hash[k];
    });
    write_csv_row(csv, rep);
    if (options.on_round) options.on_round(rep);
    result.rounds.push_back(std::move(rep));
  }

  result.test.resize(K);
  for_each_client(K, workers, [&](std::size_t k) {
    try {
      result.test[k] = evaluate(clients[k], cfg, SplitKind::kTest, cfg.rounds + 1, sched).seg;
    } catch (const std::exception& e) {
      throw RunAbort(cfg.rounds, k, std::string("test evaluation: ") + e.what());
    }
  });

  if (out.empty()) return result;
  write_text(out / "metrics.csv", csv);

  std::filesystem::create_directories(out / "checkpoints");
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<const Tensor*> tensors;
    for (const auto& p : clients[k].model->all_params()) tensors.push_back(p.tensor);
    write_checkpoint(out / "checkpoints" / ("client" + std::to_string(k) + ".mcsf"), tensors);
  }
  {
    std::vector<const Tensor*> tensors;
    for (const auto& p : clients[0].model->shared_params(cfg.method)) tensors.push_back(p.tensor);
    write_checkpoint(out / "checkpoints" / "shared.mcsf", tensors);
  }

  for (std::size_t k : cfg.intercept_clients) {
    write_intercepts(clients[k], cfg, cfg.rounds, sched, out / "intercepts");
  }

  nlohmann::json summary;
  summary["method"] = method_name(cfg.method);
  summary["ablation"] = ablation_name(cfg.ablation);
  summary["seed"] = cfg.seed;
  summary["rounds"] = cfg.rounds;
  summary["clients"] = K;
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : result.rounds) {
    rounds.push_back({{"round", r.round}, {"IoU_NB", r.mean_iou_nb()}, {"checksum", hex(r.checksum)}});
  }
  summary["round_summary"] = rounds;
  nlohmann::json test = nlohmann::json::array();
  for (std::size_t k = 0; k < K; ++k) {
    auto j = metrics_json(result.test[k]);
    j["client"] = k;
    j["family"] = family_name(clients[k].data.data.spec.family);
    test.push_back(j);
  }
  summary["test"] = test;
  summary["test_mean_IoU_NB"] = result.mean_test_iou_nb();
  if (cfg.causal_edges()) {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& edge : result.shared_graph.edges) {
      e.push_back({{"src", result.shared_graph.names[edge.src]},
                   {"dst", result.shared_graph.names[edge.dst]},
                   {"weight", edge.weight}});
    }
    summary["shared_graph_edges"] = e;
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace mucald
