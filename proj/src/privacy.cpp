#include "mucald/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "mucald/checkpoint.hpp"
#include "mucald/errors.hpp"

namespace mucald {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing run artifact: " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Tensor stack(const std::vector<Tensor>& items, const std::vector<std::size_t>& idx) {
  const Shape& one = items.at(idx.at(0)).shape();
  Shape shape{idx.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  Tensor out(shape);
  const std::size_t n = shape_numel(one);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& t = items.at(idx[i]);
    if (t.shape() != one) throw DimensionError("attack: inconsistent payload shapes");
    std::copy(t.data(), t.data() + n, out.data() + i * n);
  }
  return out;
}

Tensor slice(const Tensor& batch, std::size_t i) {
  Shape one(batch.shape().begin() + 1, batch.shape().end());
  Tensor t(one);
  const std::size_t n = t.size();
  std::copy(batch.data() + i * n, batch.data() + (i + 1) * n, t.data());
  return t;
}

nlohmann::json stats_json(const ReconStats& s) {
  return {{"count", s.count},
          {"MSE", s.mean.mse},
          {"MSE_std", s.std.mse},
          {"PSNR", s.mean.psnr},
          {"PSNR_std", s.std.psnr},
          {"SSIM", s.mean.ssim},
          {"SSIM_std", s.std.ssim}};
}

std::vector<ReconMetrics> per_sample(const std::vector<Tensor>& truth,
                                     const std::vector<Tensor>& pred) {
  std::vector<ReconMetrics> out;
  for (std::size_t i = 0; i < truth.size(); ++i) out.push_back(recon_metrics(truth[i], pred[i]));
  return out;
}

}  // namespace

InterceptLog read_intercepts(const std::filesystem::path& run_dir, std::size_t client, int split,
                             std::string_view kind) {
  const auto dir = run_dir / "intercepts";
  InterceptLog log;
  log.split = split;
  const std::string bytes = slurp(dir / intercept_file(client, split, kind));
  std::size_t off = 0;
  while (off < bytes.size()) {
    log.frames.push_back(decode_frame(bytes, off));
    if (log.frames.back().split != split) {
      throw DataError("intercepts: frame " + std::to_string(log.frames.size() - 1) +
                      " is from split " + std::to_string(log.frames.back().split));
    }
  }
  std::istringstream ids(slurp(dir / intercept_ids_file(client)));
  std::string line;
  std::getline(ids, line);  // header
  std::size_t lineno = 1;
  while (std::getline(ids, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    try {
      log.image_ids.push_back(std::stoull(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw DataError(intercept_ids_file(client) + ": line " + std::to_string(lineno) +
                      ": bad image id");
    }
  }
  if (log.image_ids.size() != log.frames.size()) {
    throw DataError("intercepts: " + std::to_string(log.frames.size()) + " frames but " +
                    std::to_string(log.image_ids.size()) + " ids");
  }
  return log;
}

ReconStats summarize(const std::vector<ReconMetrics>& v) {
  ReconStats s;
  s.count = v.size();
  if (v.empty()) return s;
  const double n = static_cast<double>(v.size());
  for (const auto& m : v) {
    s.mean.mse += m.mse / n;
    s.mean.psnr += m.psnr / n;
    s.mean.ssim += m.ssim / n;
  }
  for (const auto& m : v) {
    s.std.mse += (m.mse - s.mean.mse) * (m.mse - s.mean.mse) / n;
    s.std.psnr += (m.psnr - s.mean.psnr) * (m.psnr - s.mean.psnr) / n;
    s.std.ssim += (m.ssim - s.mean.ssim) * (m.ssim - s.mean.ssim) / n;
  }
  s.std.mse = std::sqrt(s.std.mse);
  s.std.psnr = std::sqrt(s.std.psnr);
  s.std.ssim = std::sqrt(s.std.ssim);
  return s;
}

AttackDecoder::AttackDecoder(std::size_t channels, std::size_t hidden, bool upsample,
                             std::uint64_t seed) {
  Rng rng(seed);
  net_.emplace<Conv2d>("attack.conv1", channels, hidden, 3, rng);
  net_.emplace<ActivationLayer>("attack.relu1", Activation::kRelu);
  if (upsample) net_.emplace<Upsample2>("attack.up");
  net_.emplace<Conv2d>("attack.conv2", hidden, hidden, 3, rng);
  net_.emplace<ActivationLayer>("attack.relu2", Activation::kRelu);
  net_.emplace<Conv2d>("attack.conv3", hidden, 1, 3, rng);
}

AttackDecoder train_attack_decoder(const AttackSet& train, const AttackConfig& cfg) {
  if (train.inputs.size() != train.targets.size()) {
    throw DimensionError("attack: inputs and targets differ in count");
  }
  if (train.inputs.size() < cfg.min_intercepts) {
    throw DataError("attack: " + std::to_string(train.inputs.size()) +
                    " intercepts, at least " + std::to_string(cfg.min_intercepts) + " required");
  }
  const Tensor& z0 = train.inputs.front();
  const Tensor& x0 = train.targets.front();
  const bool upsample = x0.dim(1) == 2 * z0.dim(1);
  if (!upsample && x0.dim(1) != z0.dim(1)) throw DimensionError("attack: payload resolution");
  AttackDecoder dec(z0.dim(0), cfg.hidden, upsample, cfg.seed);
  Adam opt(dec.parameters(), AdamConfig{cfg.lr});

  std::vector<std::size_t> pair(train.inputs.size());
  std::iota(pair.begin(), pair.end(), 0);
  Rng rng(cfg.seed ^ 0xA77AC4ULL);
  if (cfg.shuffle_pairs) std::shuffle(pair.begin(), pair.end(), rng);

  std::uniform_int_distribution<std::size_t> pick(0, train.inputs.size() - 1);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> in_idx(cfg.batch_size), out_idx(cfg.batch_size);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      in_idx[i] = pick(rng);
      out_idx[i] = pair[in_idx[i]];
    }
    const Tensor pred = dec.forward(stack(train.inputs, in_idx));
    const Tensor target = stack(train.targets, out_idx);
    Tensor grad(pred.shape());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) grad[i] = scale * (pred[i] - target[i]);
    dec.backward(grad);
    opt.step();
  }
  return dec;
}

std::vector<Tensor> reconstruct(AttackDecoder& decoder, const std::vector<Tensor>& inputs) {
  std::vector<Tensor> out;
  for (std::size_t start = 0; start < inputs.size(); start += 32) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(inputs.size(), start + 32); ++i) idx.push_back(i);
    const Tensor pred = decoder.forward(stack(inputs, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) out.push_back(slice(pred, i));
  }
  return out;
}

std::string AttackReport::to_json() const {
  nlohmann::json j;
  j["split"] = split;
  j["obfuscation"] = obfuscation ? "on" : "off";
  j["train_intercepts"] = train_count;
  j["attack"] = stats_json(attack);
  j["mean_image_baseline"] = stats_json(mean_image);
  j["shuffled_control"] = stats_json(shuffled);
  j["denoiser_fidelity"] = stats_json(fidelity);
  j["raw_noisy"] = stats_json(raw_noisy);
  if (mia_auc >= 0.0) j["MIA_AUC"] = mia_auc;
  return j.dump(2) + "\n";
}

AttackReport attack_run(const std::filesystem::path& run_dir, const std::size_t client, int split,
                        bool obfuscation, const AttackConfig& cfg,
                        std::vector<Tensor>* reconstructions) {
  if (split != 1 && split != 2) throw ConfigError("split: must be 1 or 2");
  const RunConfig run_cfg = load_config(run_dir / "config.ini");
  if (client >= run_cfg.clients) throw ConfigError("client: out of range");
  const Dataset data = generate(client_task(run_cfg, client));
  std::unordered_map<std::uint64_t, const Sample*> by_id;
  for (auto k : {SplitKind::kTrain, SplitKind::kVal, SplitKind::kTest})
    for (const auto& s : data.split(k)) by_id[s.id] = &s;

  const InterceptLog clean = read_intercepts(run_dir, client, split, "clean");
  const InterceptLog noisy = read_intercepts(run_dir, client, split, "noisy");
  const InterceptLog wire = read_intercepts(run_dir, client, split, "wire");
  if (clean.image_ids.size() != wire.image_ids.size() ||
      clean.image_ids.size() != noisy.image_ids.size()) {
    throw DataError("intercepts: streams differ in length");
  }
  const InterceptLog& seen = obfuscation ? wire : clean;

  AttackSet train, test;
  std::vector<Tensor> test_clean, test_noisy, test_wire;
  for (std::size_t i = 0; i < seen.frames.size(); ++i) {
    const auto it = by_id.find(seen.image_ids[i]);
    if (it == by_id.end()) {
      throw DataError("intercepts: image id " + std::to_string(seen.image_ids[i]) +
                      " not in the dataset");
    }
    const bool held_out = (seen.image_ids[i] >> 32) == static_cast<std::uint64_t>(SplitKind::kTest);
    AttackSet& dst = held_out ? test : train;
    dst.inputs.push_back(frame_tensor(seen.frames[i]));
    dst.targets.push_back(it->second->image);
    if (held_out) {
      test_clean.push_back(frame_tensor(clean.frames[i]));
      test_noisy.push_back(frame_tensor(noisy.frames[i]));
      test_wire.push_back(frame_tensor(wire.frames[i]));
    }
  }
  if (test.inputs.empty()) throw DataError("intercepts: no held-out frames");

  AttackReport rep;
  rep.split = split;
  rep.obfuscation = obfuscation;
  rep.train_count = train.inputs.size();

  AttackDecoder dec = train_attack_decoder(train, cfg);
  const auto recon = reconstruct(dec, test.inputs);
  rep.attack = summarize(per_sample(test.targets, recon));

  Tensor mean_img(train.targets.front().shape());
  for (const auto& t : train.targets)
    for (std::size_t i = 0; i < t.size(); ++i) mean_img[i] += t[i] / static_cast<double>(train.targets.size());
  rep.mean_image = summarize(per_sample(test.targets, std::vector<Tensor>(test.targets.size(), mean_img)));

  AttackConfig shuffled = cfg;
  shuffled.shuffle_pairs = true;
  AttackDecoder ctrl = train_attack_decoder(train, shuffled);
  rep.shuffled = summarize(per_sample(test.targets, reconstruct(ctrl, test.inputs)));

  rep.fidelity = summarize(per_sample(test_clean, test_wire));
  rep.raw_noisy = summarize(per_sample(test_clean, test_noisy));
  if (reconstructions) *reconstructions = recon;
  return rep;
}

double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw DataError("auc: empty score set");
  // Rank-sum form with midranks for ties.
  std::vector<std::pair<double, int>> all;
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum += mid;
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double membership_inference(ClientModel& model, const ClientData& data,
                            const std::vector<std::size_t>& members,
                            const std::vector<std::size_t>& holdout, const RunConfig& cfg,
                            std::uint64_t seed) {
  if (members.empty() || holdout.empty()) throw DataError("membership inference: empty set");
  if (members.size() != holdout.size()) {
    throw DataError("membership inference: member and holdout sets differ in size");
  }
  const auto sched = cosine_schedule(cfg.diffusion.steps, cfg.diffusion.offset);
  auto scores = [&](SplitKind split, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> chunk(
          idx.begin() + static_cast<std::ptrdiff_t>(start),
          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + cfg.batch_size)));
      const Batch b = make_batch(data, split, chunk, nullptr);
      StepOptions o;
      o.train = false;
      o.t1 = o.t2 = cfg.diffusion.eval_t;
      o.noise_seed = seed + start;
      o.quantize = false;
      const auto r = model.run(b, o, sched, false);
      for (double l : per_sample_dice_loss(r.probs, b.labels)) out.push_back(-l);
    }
    return out;
  };
  return auc(scores(SplitKind::kTrain, members), scores(SplitKind::kTest, holdout));
}

LoadedClient load_client(const std::filesystem::path& run_dir, std::size_t client) {
  LoadedClient lc;
  lc.cfg = load_config(run_dir / "config.ini");
  if (client >= lc.cfg.clients) throw ConfigError("client: out of range");
  lc.data = prepare_client(lc.cfg, client);
  std::vector<Edge> edges;
  if (lc.cfg.causal_edges()) {
    std::ifstream g(run_dir / "graphs" / "shared.json");
    if (!g) throw DataError("missing run artifact: graphs/shared.json");
    edges = read_graph_json(g).edges;
  }
  lc.model = std::make_unique<ClientModel>(
      ModelSpec::from_config(lc.cfg, lc.data.proxy_spec.size(), edges),
      InitSeeds::derive(lc.cfg.seed, client));
  const auto path = run_dir / "checkpoints" / ("client" + std::to_string(client) + ".mcsf");
  if (!std::filesystem::exists(path)) throw DataError("missing run artifact: " + path.string());
  const auto tensors = read_checkpoint(path);
  const auto params = lc.model->all_params();
  if (tensors.size() != params.size()) throw DataError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].shape() != params[i].tensor->shape()) {
      throw DataError("checkpoint: shape mismatch for " + params[i].name);
    }
    std::copy(tensors[i].data(), tensors[i].data() + tensors[i].size(), params[i].tensor->data());
  }
  return lc;
}

}  // namespace mucald
