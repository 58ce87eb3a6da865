#include "mucald/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mucald/causal_discovery.hpp"
#include "mucald/checkpoint.hpp"
#include "mucald/config.hpp"
#include "mucald/errors.hpp"
#include "mucald/privacy.hpp"
#include "mucald/runtime.hpp"
#include "mucald/validation.hpp"

namespace mucald {
namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && p == end && std::isfinite(v);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("--out: cannot write " + path.string());
  f << text;
}

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.6g", v);
  return b;
}

// ------------------------------------------------------------ commands

struct RunArgs {
  std::string config, ablation, out;
  int rounds = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_run(const RunArgs& a, std::ostream& out) {
  if (!fs::is_regular_file(a.config)) throw ConfigError("--config: no such file " + a.config);
  RunConfig cfg = load_config(a.config);
  if (!a.ablation.empty()) cfg.ablation = parse_ablation(a.ablation);
  if (a.rounds > 0) cfg.rounds = a.rounds;
  if (a.seed_set) cfg.seed = a.seed;
  cfg.validate();
  RunOptions opt;
  opt.out_dir = a.out;
  opt.on_round = [&](const RoundReport& r) {
    double diff = 0.0;
    for (const auto& c : r.clients) diff += c.loss.diff1 + c.loss.diff2;
    out << "round " << r.round << "  IoU_NB " << fmt(r.mean_iou_nb()) << "  L_diff "
        << fmt(diff / static_cast<double>(r.clients.size())) << std::endl;
  };
  const RunResult res = run(cfg, opt);
  out << "test IoU_NB " << fmt(res.mean_test_iou_nb()) << "\n";
  return kExitOk;
}

struct GraphArgs {
  std::string features, out, variant = "linear";
  std::size_t k = 3;
  double threshold = 0.3;
  std::uint64_t seed = 0;
};

int cmd_discover(const GraphArgs& a, std::ostream& out) {
  std::ifstream in(a.features);
  if (!in) throw DataError("--features: cannot open " + a.features);
  std::vector<std::string> names;
  const Tensor x = read_feature_csv(in, &names);
  NotearsConfig cfg;
  cfg.top_k = a.k;
  cfg.threshold = a.threshold;
  cfg.seed = a.seed;
  cfg.validate();
  const auto variant = a.variant == "mlp" ? NotearsVariant::kMlp : NotearsVariant::kLinear;
  CausalGraph g = fit_notears(x, cfg, variant, names);
  g.edges = top_k_edges(g, a.k);
  std::ostringstream json;
  write_graph_json(json, g);
  write_text(a.out, json.str());
  for (const auto& e : g.edges) {
    out << g.names[e.src] << " -> " << g.names[e.dst] << "  " << fmt(e.weight) << "\n";
  }
  out << g.edges.size() << " edge(s), h = " << fmt(g.h_value) << "\n";
  return kExitOk;
}

struct AttackArgs {
  std::string run_dir, obfuscation, out;
  int split = 1;
  std::size_t client = 0, steps = 500;
  std::uint64_t seed = 0;
  bool mia = true;
};

int cmd_attack(const AttackArgs& a, std::ostream& out) {
  const fs::path dir = a.run_dir;
  for (const char* need : {"config.ini", "intercepts", "checkpoints"}) {
    if (!fs::exists(dir / need)) throw DataError("--run: missing " + (dir / need).string());
  }
  AttackConfig cfg;
  cfg.steps = a.steps;
  cfg.seed = a.seed;
  const bool on = a.obfuscation == "on";
  std::vector<Tensor> recon;
  AttackReport rep = attack_run(dir, a.client, a.split, on, cfg, &recon);
  if (a.mia) {
    LoadedClient lc = load_client(dir, a.client);
    const std::size_t n = std::min(lc.data.data.train.size(), lc.data.data.test.size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rep.mia_auc = membership_inference(*lc.model, lc.data, idx, idx, lc.cfg, a.seed);
  }
  const std::string stem =
      "attack_split" + std::to_string(a.split) + "_" + (on ? "on" : "off");
  write_text(fs::path(a.out) / (stem + ".json"), rep.to_json());
  std::vector<const Tensor*> ptrs;
  for (const auto& t : recon) ptrs.push_back(&t);
  write_checkpoint(fs::path(a.out) / (stem + "_recon.mcsf"), ptrs);
  out << "split " << a.split << " obfuscation " << (on ? "on" : "off") << "  attack PSNR "
      << fmt(rep.attack.mean.psnr) << "  mean-image PSNR " << fmt(rep.mean_image.mean.psnr)
      << "  fidelity PSNR " << fmt(rep.fidelity.mean.psnr) << "  raw-noisy PSNR "
      << fmt(rep.raw_noisy.mean.psnr);
  if (rep.mia_auc >= 0) out << "  MIA AUC " << fmt(rep.mia_auc);
  out << "\n";
  return kExitOk;
}

int emit_suite(const std::vector<CheckResult>& r, const std::string& out_dir,
               const std::string& file, std::ostream& out) {
  const std::string table = format_results(r);
  out << table;
  if (!out_dir.empty()) write_text(fs::path(out_dir) / file, table);
  const bool ok = all_pass(r);
  out << (ok ? "all checks passed" : "FAILED") << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

// Collects attack report files: plain files as given, directories scanned for
// attack_*.json.
std::vector<fs::path> attack_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& s : inputs) {
    const fs::path p = s;
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        const auto name = e.path().filename().string();
        if (name.rfind("attack_", 0) == 0 && e.path().extension() == ".json") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw DataError("--attack: no such file or directory " + s);
    }
  }
  return files;
}

nlohmann::json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("missing " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

int cmd_report(const std::vector<std::string>& runs, const std::vector<std::string>& attacks,
               const std::string& out_dir, std::ostream& out) {
  const auto& cols = SegMetrics::column_names();
  std::string seg = "run,method,ablation,seed,client,family";
  for (const auto& c : cols) seg += "," + c;
  seg += "\n";
  std::string curve = "run,round,IoU_NB\n";
  for (const auto& r : runs) {
    const auto s = load_json(fs::path(r) / "summary.json");
    const std::string tag = fs::path(r).filename().string();
    std::vector<double> mean(cols.size(), 0.0);
    for (const auto& t : s.at("test")) {
      seg += tag + "," + s.at("method").get<std::string>() + "," +
             s.at("ablation").get<std::string>() + "," + std::to_string(s.at("seed").get<std::uint64_t>()) +
             "," + std::to_string(t.at("client").get<int>()) + "," + t.at("family").get<std::string>();
      for (std::size_t i = 0; i < cols.size(); ++i) {
        const double v = t.at(cols[i]).get<double>();
        mean[i] += v / static_cast<double>(s.at("test").size());
        seg += "," + fmt(v);
      }
      seg += "\n";
    }
    out << tag << " (" << s.at("method").get<std::string>() << ", "
        << s.at("ablation").get<std::string>() << ")";
    for (std::size_t i = 0; i < cols.size(); ++i) out << "  " << cols[i] << " " << fmt(mean[i]);
    out << "\n";
    for (const auto& rs : s.at("round_summary")) {
      curve += tag + "," + std::to_string(rs.at("round").get<int>()) + "," +
               fmt(rs.at("IoU_NB").get<double>()) + "\n";
    }
  }
  write_text(fs::path(out_dir) / "segmentation.csv", seg);
  write_text(fs::path(out_dir) / "rounds.csv", curve);

  const auto files = attack_files(attacks);
  if (!files.empty()) {
    std::string priv =
        "report,split,obfuscation,MSE,PSNR,SSIM,mean_image_PSNR,shuffled_PSNR,"
        "denoiser_fidelity_PSNR,raw_noisy_PSNR,MIA_AUC\n";
    for (const auto& f : files) {
      const auto j = load_json(f);
      auto psnr = [&](const char* k) { return fmt(j.at(k).at("PSNR").get<double>()); };
      const auto& m = j.at("attack");
      priv += f.filename().string() + "," + std::to_string(j.at("split").get<int>()) + "," +
              j.at("obfuscation").get<std::string>() + "," + fmt(m.at("MSE").get<double>()) + "," +
              fmt(m.at("PSNR").get<double>()) + "," + fmt(m.at("SSIM").get<double>()) + "," +
              psnr("mean_image_baseline") + "," + psnr("shuffled_control") + "," +
              psnr("denoiser_fidelity") + "," + psnr("raw_noisy") + "," +
              (j.contains("MIA_AUC") ? fmt(j.at("MIA_AUC").get<double>()) : "") + "\n";
      out << f.filename().string() << "  attack PSNR " << fmt(m.at("PSNR").get<double>()) << "\n";
    }
    write_text(fs::path(out_dir) / "privacy.csv", priv);
  }
  return kExitOk;
}

}  // namespace

Tensor read_feature_csv(std::istream& in, std::vector<std::string>* names) {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> header;
  std::size_t width = 0;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (trim(line).empty()) continue;
    const auto cells = split_row(line);
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw DataError("line " + std::to_string(lineno) + ": need at least 2 columns");
      double v;
      const bool any_numeric = std::any_of(cells.begin(), cells.end(),
                                           [&](const std::string& c) { return parse_double(c, v); });
      if (!any_numeric && rows.empty()) {
        header = cells;
        continue;
      }
    }
    if (cells.size() != width) {
      throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(width) +
                      " columns, got " + std::to_string(cells.size()));
    }
    std::vector<double> row(width);
    for (std::size_t j = 0; j < width; ++j) {
      if (!parse_double(cells[j], row[j])) {
        throw DataError("line " + std::to_string(lineno) + ", column " + std::to_string(j + 1) +
                        ": not a number: '" + cells[j] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no data rows");
  Tensor x({rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) x.at(i, j) = rows[i][j];
  if (names) *names = header;
  return x;
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated split segmentation with causal diffusion and domain alignment"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run_cmd = app.add_subcommand("run", "Train a federated split run");
  run_cmd->add_option("--config", ra.config, "INI configuration")->required();
  run_cmd->add_option("--ablation", ra.ablation,
                      "crdm-only | daca-only | no-causality | no-diffusion | no-forward-noise");
  run_cmd->add_option("--rounds", ra.rounds, "Override the number of rounds")->check(CLI::PositiveNumber);
  auto* seed_opt = run_cmd->add_option("--seed", ra.seed, "Override the run seed");
  run_cmd->add_option("--out", ra.out, "Output directory")->required();

  GraphArgs ga;
  auto* graph_cmd = app.add_subcommand("discover-graph", "Fit a causal graph to a feature CSV");
  graph_cmd->add_option("--features", ga.features, "Numeric CSV, optional header")->required();
  graph_cmd->add_option("--k", ga.k, "Edges to keep")->check(CLI::PositiveNumber);
  graph_cmd->add_option("--variant", ga.variant, "linear | mlp")
      ->check(CLI::IsMember({"linear", "mlp"}));
  graph_cmd->add_option("--threshold", ga.threshold, "Edge weight threshold");
  graph_cmd->add_option("--seed", ga.seed, "Initialisation seed");
  graph_cmd->add_option("--out", ga.out, "Graph JSON path")->required();

  AttackArgs aa;
  auto* attack_cmd = app.add_subcommand("attack", "Reconstruction and membership attacks on a run");
  attack_cmd->add_option("--run", aa.run_dir, "Finished run directory")->required();
  attack_cmd->add_option("--split", aa.split, "Split point")->required()->check(CLI::IsMember({1, 2}));
  attack_cmd->add_option("--obfuscation", aa.obfuscation, "on | off")
      ->required()
      ->check(CLI::IsMember({"on", "off"}));
  attack_cmd->add_option("--client", aa.client, "Intercepted client");
  attack_cmd->add_option("--steps", aa.steps, "Decoder training steps")->check(CLI::PositiveNumber);
  attack_cmd->add_flag("!--no-mia", aa.mia, "Skip membership inference");
  attack_cmd->add_option("--seed", aa.seed, "Attack seed");
  attack_cmd->add_option("--out", aa.out, "Output directory")->required();

  std::uint64_t gc_seed = 1;
  std::string gc_out;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  grad_cmd->add_option("--seed", gc_seed, "Suite seed");
  grad_cmd->add_option("--out", gc_out, "Directory for grad_check.txt");

  std::uint64_t mo_seed = 1;
  std::size_t mo_cases = 20;
  std::string mo_out;
  auto* oracle_cmd = app.add_subcommand("metrics-oracle", "Brute-force metric comparison");
  oracle_cmd->add_option("--seed", mo_seed, "Case generator seed");
  oracle_cmd->add_option("--cases", mo_cases, "Random cases")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--out", mo_out, "Directory for metrics_oracle.txt");

  std::vector<std::string> rp_runs, rp_attacks;
  std::string rp_out;
  std::uint64_t rp_seed = 0;
  auto* report_cmd = app.add_subcommand("report", "Tabulate finished runs and attack reports");
  report_cmd->add_option("--run", rp_runs, "Run directories")->required();
  report_cmd->add_option("--attack", rp_attacks, "Attack report files or directories");
  report_cmd->add_option("--seed", rp_seed, "Unused; accepted for uniformity");
  report_cmd->add_option("--out", rp_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  ra.seed_set = seed_opt->count() > 0;

  try {
    if (run_cmd->parsed()) return cmd_run(ra, out);
    if (graph_cmd->parsed()) return cmd_discover(ga, out);
    if (attack_cmd->parsed()) return cmd_attack(aa, out);
    if (grad_cmd->parsed()) return emit_suite(grad_check_suite(gc_seed), gc_out, "grad_check.txt", out);
    if (oracle_cmd->parsed()) {
      return emit_suite(metrics_oracle_suite(mo_seed, mo_cases), mo_out, "metrics_oracle.txt", out);
    }
    if (report_cmd->parsed()) return cmd_report(rp_runs, rp_attacks, rp_out, out);
  } catch (const RunAbort& e) {
    err << "run aborted: " << e.what() << "\n";
    return kExitAbort;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FrameError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitAbort;
  }
  return kExitUsage;
}

}  // namespace mucald
