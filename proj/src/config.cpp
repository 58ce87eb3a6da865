#include "mucald/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mucald/errors.hpp"
#include "mucald/proxy_features.hpp"

namespace mucald {
namespace {

struct AblationInfo {
  Ablation value;
  std::string_view cli;
  std::string_view key;
};

constexpr std::array<AblationInfo, 6> kAblations = {{
    {Ablation::kNone, "none", "none"},
    {Ablation::kCrdmOnly, "crdm-only", "crdm_only"},
    {Ablation::kDacaOnly, "daca-only", "daca_only"},
    {Ablation::kNoCausality, "no-causality", "no_causality"},
    {Ablation::kNoDiffusion, "no-diffusion", "no_diffusion"},
    {Ablation::kNoForwardNoise, "no-forward-noise", "no_forward_noise"},
}};

[[noreturn]] void bad(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

template <typename T>
T parse_int(const std::string& path, const std::string& s) {
  T v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) bad(path, "expected an integer, got '" + s + "'");
  return v;
}

double parse_double(const std::string& path, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    bad(path, "expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) bad(path, "expected a finite number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& path, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad(path, "expected true/false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t"), e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

std::string fmt_double(double v) {
  std::array<char, 64> buf;
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string& path, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MUCALD_SIZE(member)                                                                     \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& p, const std::string& v) {                              \
      c.member = parse_int<std::size_t>(p, v);                                                  \
    },                                                                                          \
        [](const RunConfig& c) { return std::to_string(c.member); }                             \
  }
#define MUCALD_INT(member)                                                                      \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& p, const std::string& v) { c.member = parse_int<int>(p, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                             \
  }
#define MUCALD_DOUBLE(member)                                                                   \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& p, const std::string& v) { c.member = parse_double(p, v); }, \
        [](const RunConfig& c) { return fmt_double(c.member); }                                 \
  }
#define MUCALD_BOOL(member)                                                                     \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& p, const std::string& v) { c.member = parse_bool(p, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }             \
  }

// Ordered (section, key) registry; the order is the write order.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("run.method",
                   Field{[](RunConfig& c, const std::string& p, const std::string& v) {
                           if (v == "mucald") {
                             c.method = Method::kMucald;
                           } else if (v == "baseline") {
                             c.method = Method::kBaseline;
                           } else {
                             bad(p, "expected mucald or baseline, got '" + v + "'");
                           }
                         },
                         [](const RunConfig& c) { return std::string(method_name(c.method)); }});
    t.emplace_back("run.rounds", MUCALD_INT(rounds));
    t.emplace_back("run.local_epochs", MUCALD_INT(local_epochs));
    t.emplace_back("run.clients", MUCALD_SIZE(clients));
    t.emplace_back("run.batch_size", MUCALD_SIZE(batch_size));
    t.emplace_back("run.image_size", MUCALD_SIZE(image_size));
    t.emplace_back("run.train", MUCALD_SIZE(train));
    t.emplace_back("run.val", MUCALD_SIZE(val));
    t.emplace_back("run.test", MUCALD_SIZE(test));
    t.emplace_back("run.noise", MUCALD_DOUBLE(noise));
    t.emplace_back("run.seed", Field{[](RunConfig& c, const std::string& p, const std::string& v) {
                                       c.seed = parse_int<std::uint64_t>(p, v);
                                     },
                                     [](const RunConfig& c) { return std::to_string(c.seed); }});
    t.emplace_back("run.steps_per_epoch", MUCALD_SIZE(steps_per_epoch));
    t.emplace_back("run.augment", MUCALD_BOOL(augment));
    t.emplace_back("run.intercept_clients",
                   Field{[](RunConfig& c, const std::string& p, const std::string& v) {
                           c.intercept_clients.clear();
                           for (const auto& s : split_list(v)) {
                             c.intercept_clients.push_back(parse_int<std::size_t>(p, s));
                           }
                         },
                         [](const RunConfig& c) { return join(c.intercept_clients); }});
    t.emplace_back("run.threads", MUCALD_SIZE(threads));
    t.emplace_back("run.proxy_features",
                   Field{[](RunConfig& c, const std::string& p, const std::string& v) {
                           c.proxy_features = split_list(v);
                           if (c.proxy_features.empty()) return;
                           try {
                             ProxySpec check(c.proxy_features);
                           } catch (const ConfigError& e) {
                             bad(p, e.what());
                           }
                         },
                         [](const RunConfig& c) { return join(c.proxy_features); }});

    t.emplace_back("model.fe_width1", MUCALD_SIZE(model.fe_width1));
    t.emplace_back("model.fe_width2", MUCALD_SIZE(model.fe_width2));
    t.emplace_back("model.ss_width", MUCALD_SIZE(model.ss_width));
    t.emplace_back("model.be_width", MUCALD_SIZE(model.be_width));
    t.emplace_back("model.d_u", MUCALD_SIZE(model.d_u));
    t.emplace_back("model.enc_hidden", MUCALD_SIZE(model.enc_hidden));
    t.emplace_back("model.scm_hidden", MUCALD_SIZE(model.scm_hidden));
    t.emplace_back("model.den_hidden", MUCALD_SIZE(model.den_hidden));
    t.emplace_back("model.time_dim", MUCALD_SIZE(model.time_dim));
    t.emplace_back("model.disc_hidden", MUCALD_SIZE(model.disc_hidden));
    t.emplace_back("model.quantize_wire", MUCALD_BOOL(model.quantize_wire));

    t.emplace_back("loss.seg", MUCALD_DOUBLE(loss.seg));
    t.emplace_back("loss.proxy", MUCALD_DOUBLE(loss.proxy));
    t.emplace_back("loss.diff", MUCALD_DOUBLE(loss.diff));
    t.emplace_back("loss.klu", MUCALD_DOUBLE(loss.klu));
    t.emplace_back("loss.klz", MUCALD_DOUBLE(loss.klz));
    t.emplace_back("loss.adv", MUCALD_DOUBLE(loss.adv));
    t.emplace_back("loss.warmup_epochs", MUCALD_INT(warmup_epochs));
    t.emplace_back("loss.rampup_epochs", MUCALD_INT(rampup_epochs));
    t.emplace_back("loss.alpha_max", MUCALD_DOUBLE(alpha_max));
    t.emplace_back("loss.lr", MUCALD_DOUBLE(lr));

    t.emplace_back("diffusion.steps", MUCALD_INT(diffusion.steps));
    t.emplace_back("diffusion.offset", MUCALD_DOUBLE(diffusion.offset));
    t.emplace_back("diffusion.train_t_max", MUCALD_INT(diffusion.train_t_max));
    t.emplace_back("diffusion.eval_t", MUCALD_INT(diffusion.eval_t));

    t.emplace_back("notears.variant",
                   Field{[](RunConfig& c, const std::string& p, const std::string& v) {
                           if (v == "mlp") {
                             c.notears_variant = NotearsVariant::kMlp;
                           } else if (v == "linear") {
                             c.notears_variant = NotearsVariant::kLinear;
                           } else {
                             bad(p, "expected mlp or linear, got '" + v + "'");
                           }
                         },
                         [](const RunConfig& c) {
                           return std::string(c.notears_variant == NotearsVariant::kMlp ? "mlp"
                                                                                       : "linear");
                         }});
    t.emplace_back("notears.lambda1", MUCALD_DOUBLE(notears.lambda1));
    t.emplace_back("notears.lambda2", MUCALD_DOUBLE(notears.lambda2));
    t.emplace_back("notears.threshold", MUCALD_DOUBLE(notears.threshold));
    t.emplace_back("notears.top_k", MUCALD_SIZE(notears.top_k));
    t.emplace_back("notears.hidden", MUCALD_SIZE(notears.hidden));
    t.emplace_back("notears.max_outer_iters", MUCALD_INT(notears.max_outer_iters));
    t.emplace_back("notears.inner_steps", MUCALD_INT(notears.inner_steps));
    t.emplace_back("notears.h_tolerance", MUCALD_DOUBLE(notears.h_tolerance));

    for (const auto& a : kAblations) {
      if (a.value == Ablation::kNone) continue;
      const Ablation value = a.value;
      t.emplace_back("ablation." + std::string(a.key),
                     Field{[value](RunConfig& c, const std::string& p, const std::string& v) {
                             if (!parse_bool(p, v)) return;
                             if (c.ablation != Ablation::kNone && c.ablation != value) {
                               bad(p, "only one ablation flag may be set (already " +
                                          std::string(ablation_name(c.ablation)) + ")");
                             }
                             c.ablation = value;
                           },
                           [value](const RunConfig& c) {
                             return std::string(c.ablation == value ? "true" : "false");
                           }});
    }
    return t;
  }();
  return table;
}

#undef MUCALD_SIZE
#undef MUCALD_INT
#undef MUCALD_DOUBLE
#undef MUCALD_BOOL

}  // namespace

std::string_view ablation_name(Ablation a) { return kAblations[static_cast<std::size_t>(a)].cli; }

Ablation parse_ablation(std::string_view name) {
  for (const auto& a : kAblations) {
    if (a.cli == name || a.key == name) return a.value;
  }
  throw ConfigError("ablation: unknown value '" + std::string(name) +
                    "' (expected crdm-only, daca-only, no-causality, no-diffusion or "
                    "no-forward-noise)");
}

std::string_view method_name(Method m) { return m == Method::kMucald ? "mucald" : "baseline"; }

bool RunConfig::crdm_enabled() const {
  return method == Method::kMucald && ablation != Ablation::kDacaOnly;
}
bool RunConfig::daca_enabled() const {
  return method == Method::kMucald && ablation != Ablation::kCrdmOnly;
}
bool RunConfig::causal_edges() const { return crdm_enabled() && ablation != Ablation::kNoCausality; }
bool RunConfig::diffusion_enabled() const {
  return crdm_enabled() && ablation != Ablation::kNoDiffusion;
}
bool RunConfig::forward_noise() const {
  return diffusion_enabled() && ablation != Ablation::kNoForwardNoise;
}

void RunConfig::validate() const {
  if (rounds < 1) bad("run.rounds", "must be >= 1");
  if (local_epochs < 1) bad("run.local_epochs", "must be >= 1");
  if (clients < 1) bad("run.clients", "must be >= 1");
  if (clients > 255) bad("run.clients", "at most 255 clients fit the frame header");
  if (batch_size < 1) bad("run.batch_size", "must be >= 1");
  if (image_size < 16 || image_size % 2 != 0) bad("run.image_size", "must be even and >= 16");
  if (train < 1) bad("run.train", "must be >= 1");
  if (val < 1) bad("run.val", "must be >= 1");
  if (!(noise >= 0.0)) bad("run.noise", "must be >= 0");
  for (auto c : intercept_clients) {
    if (c >= clients) bad("run.intercept_clients", "client " + std::to_string(c) + " out of range");
  }
  for (auto [name, v] : {std::pair{"model.fe_width1", model.fe_width1},
                         {"model.fe_width2", model.fe_width2}, {"model.ss_width", model.ss_width},
                         {"model.be_width", model.be_width}, {"model.enc_hidden", model.enc_hidden},
                         {"model.scm_hidden", model.scm_hidden},
                         {"model.den_hidden", model.den_hidden},
                         {"model.disc_hidden", model.disc_hidden}}) {
    if (v < 1) bad(name, "must be >= 1");
  }
  if (model.time_dim < 2 || model.time_dim % 2 != 0) bad("model.time_dim", "must be even and >= 2");
  const std::size_t proxy_dim =
      proxy_features.empty() ? default_proxy_features().size() : proxy_features.size();
  if (model.d_u < proxy_dim) {
    bad("model.d_u", "must be >= the number of proxy features (" + std::to_string(proxy_dim) + ")");
  }
  try {
    loss.validate();
  } catch (const ConfigError& e) {
    bad("loss", e.what());
  }
  if (warmup_epochs < 0) bad("loss.warmup_epochs", "must be >= 0");
  if (rampup_epochs < 0) bad("loss.rampup_epochs", "must be >= 0");
  if (!(alpha_max >= 0.0)) bad("loss.alpha_max", "must be >= 0");
  if (!(lr > 0.0)) bad("loss.lr", "must be > 0");
  if (diffusion.steps < 1 || diffusion.steps > 65535) bad("diffusion.steps", "must be in [1, 65535]");
  if (!(diffusion.offset > 0.0)) bad("diffusion.offset", "must be > 0");
  if (diffusion.train_t_max < 1 || diffusion.train_t_max > diffusion.steps) {
    bad("diffusion.train_t_max", "must be in [1, steps]");
  }
  if (diffusion.eval_t < 0 || diffusion.eval_t > diffusion.steps) {
    bad("diffusion.eval_t", "must be in [0, steps]");
  }
  try {
    notears.validate();
  } catch (const ConfigError& e) {
    bad("notears", e.what());
  }
  if (method == Method::kBaseline && ablation != Ablation::kNone) {
    bad("ablation", "ablations apply to method=mucald only");
  }
}

RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, const Field*> index;
  for (const auto& [path, field] : fields()) index[path] = &field;
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) bad(section, "keys must live inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string path = section + "." + key;
      const auto it = index.find(path);
      if (it == index.end()) bad(path, "unknown key");
      it->second->set(cfg, path, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  std::string current;
  for (const auto& [path, field] : fields()) {
    const auto dot = path.find('.');
    const std::string section = path.substr(0, dot), key = path.substr(dot + 1);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key << " = " << field.get(cfg) << '\n';
  }
}

}  // namespace mucald
