#include "bipoint/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "bipoint/error.hpp"

namespace bipoint {

namespace pt = boost::property_tree;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("config: " + key + " = '" + value + "': " + why);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad(key, v, "expected a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad(key, v, "expected a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v, "expected true/false");
}

std::vector<std::size_t> to_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> w;
  for (const auto& item : split(v)) w.push_back(to_u64(key, item));
  if (w.empty()) bad(key, v, "expected a comma-separated width list");
  return w;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::FullPrecision: return "fp";
    case Method::Bnn: return "bnn";
    case Method::BnnLsr: return "bnn-lsr";
    case Method::BnnEmaAvg: return "bnn-ema-avg";
    case Method::BnnEmaMax: return "bnn-ema-max";
    case Method::OursAvg: return "ours-avg";
    case Method::OursMax: return "ours-max";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (auto m : all_methods())
    if (to_string(m) == text) return m;
  throw ConfigError("unknown method '" + std::string(text) + "'");
}

std::vector<Method> all_methods() {
  return {Method::FullPrecision, Method::Bnn,     Method::BnnLsr, Method::BnnEmaAvg,
          Method::BnnEmaMax,     Method::OursAvg, Method::OursMax};
}

std::string_view bit_width(Method m) { return m == Method::FullPrecision ? "32/32" : "1/1"; }

void apply_method(RunConfig& cfg, Method m) {
  auto& s = cfg.model;
  s.binarized = m != Method::FullPrecision;
  s.lsr = m == Method::BnnLsr || m == Method::OursAvg || m == Method::OursMax || m == Method::FullPrecision;
  switch (m) {
    case Method::FullPrecision:
    case Method::Bnn:
    case Method::BnnLsr: s.aggregation.kind = AggregationKind::PlainMax; break;
    case Method::BnnEmaAvg:
    case Method::OursAvg: s.aggregation.kind = AggregationKind::EmaAvg; break;
    case Method::BnnEmaMax:
    case Method::OursMax: s.aggregation.kind = AggregationKind::EmaMax; break;
  }
  cfg.resolve();
}

void RunConfig::resolve() {
  model.num_classes = classes.size();
  model.aggregation = EMAConfig::resolve(model.aggregation.kind, model.n_points, delta_solver,
                                         model.aggregation.mc_samples, model.aggregation.seed);
}

void RunConfig::validate() const {
  model.validate();
  if (train_manifest.empty() != test_manifest.empty())
    throw ConfigError("config: train_manifest and test_manifest must be given together");
  if (train_manifest.empty() && classes.size() != model.num_classes)
    throw ConfigError("config: class list and model class count disagree");
  if (per_class < 2) throw ConfigError("config: per_class must be >= 2");
  if (!(noise >= 0.0)) throw ConfigError("config: noise must be non-negative");
  if (epochs == 0) throw ConfigError("config: epochs must be positive");
  if (batch_size < 2) throw ConfigError("config: batch_size must be >= 2 (batch norm)");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (report_every == 0) throw ConfigError("config: report_every must be positive");
  if (probe_size < 2) throw ConfigError("config: probe_size must be >= 2");
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source, e.line(), e.message());
  }
  RunConfig cfg;
  static const std::set<std::string> sections{"model", "data", "train"};
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
      throw ConfigError("config: unknown section [" + section + "]");
    }
  }
  auto& m = cfg.model;
  // A method preset goes first so explicit keys can refine it.
  if (auto method = tree.get_optional<std::string>("model.method")) apply_method(cfg, parse_method(trim(*method)));

  for (const auto& [section, body] : tree) {
    for (const auto& [k, node] : body) {
      const std::string key = section + "." + k;
      const std::string v = trim(node.data());
      if (key == "model.method") continue;
      else if (key == "model.point_widths") m.point_widths = to_widths(key, v);
      else if (key == "model.head_widths") m.head_widths = to_widths(key, v);
      else if (key == "model.binarized") m.binarized = to_bool(key, v);
      else if (key == "model.lsr") m.lsr = to_bool(key, v);
      else if (key == "model.first_layer_fp") m.first_layer_fp = to_bool(key, v);
      else if (key == "model.last_layer_fp") m.last_layer_fp = to_bool(key, v);
      else if (key == "model.bn") m.bn_mode = parse_bn_mode(v);
      else if (key == "model.aggregation") m.aggregation.kind = parse_aggregation(v);
      else if (key == "model.delta_solver") {
        if (v == "closed-form") cfg.delta_solver = DeltaSolver::ClosedForm;
        else if (v == "monte-carlo") cfg.delta_solver = DeltaSolver::MonteCarlo;
        else bad(key, v, "expected closed-form or monte-carlo");
      }
      else if (key == "model.mc_samples") m.aggregation.mc_samples = to_u64(key, v);
      else if (key == "model.mc_seed") m.aggregation.seed = to_u64(key, v);
      else if (key == "model.tnet") m.use_tnet = to_bool(key, v);
      else if (key == "model.tnet_point_widths") m.tnet_point_widths = to_widths(key, v);
      else if (key == "model.tnet_head_widths") m.tnet_head_widths = to_widths(key, v);
      else if (key == "model.reg_weight") m.reg_weight = to_double(key, v);
      else if (key == "model.bn_eps") m.bn_eps = to_double(key, v);
      else if (key == "model.bn_momentum") m.bn_momentum = to_double(key, v);
      else if (key == "data.classes") {
        cfg.classes.clear();
        for (const auto& name : split(v)) cfg.classes.push_back(parse_shape(name));
      }
      else if (key == "data.per_class") cfg.per_class = to_u64(key, v);
      else if (key == "data.n_points") m.n_points = to_u64(key, v);
      else if (key == "data.noise") cfg.noise = to_double(key, v);
      else if (key == "data.train_manifest") cfg.train_manifest = v;
      else if (key == "data.test_manifest") cfg.test_manifest = v;
      else if (key == "data.num_classes") m.num_classes = to_u64(key, v);
      else if (key == "train.epochs") cfg.epochs = to_u64(key, v);
      else if (key == "train.batch_size") cfg.batch_size = to_u64(key, v);
      else if (key == "train.lr") cfg.lr = to_double(key, v);
      else if (key == "train.seed") cfg.seed = to_u64(key, v);
      else if (key == "train.output_dir") cfg.output_dir = v;
      else if (key == "train.report_every") cfg.report_every = to_u64(key, v);
      else if (key == "train.probe_size") cfg.probe_size = to_u64(key, v);
      else if (key == "train.divergence_guard") cfg.divergence_guard = to_bool(key, v);
      else throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  const std::size_t manifest_classes = m.num_classes;
  cfg.resolve();
  // With manifests the class count comes from the file, not the shape list.
  if (!cfg.train_manifest.empty() && tree.get_optional<std::string>("data.num_classes"))
    m.num_classes = manifest_classes;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open config");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string to_ini(const RunConfig& cfg) {
  const auto& m = cfg.model;
  std::ostringstream out;
  out << "[model]\n"
      << "point_widths = " << join(m.point_widths) << "\n"
      << "head_widths = " << join(m.head_widths) << "\n"
      << "binarized = " << (m.binarized ? "true" : "false") << "\n"
      << "lsr = " << (m.lsr ? "true" : "false") << "\n"
      << "first_layer_fp = " << (m.first_layer_fp ? "true" : "false") << "\n"
      << "last_layer_fp = " << (m.last_layer_fp ? "true" : "false") << "\n"
      << "bn = " << to_string(m.bn_mode) << "\n"
      << "aggregation = " << to_string(m.aggregation.kind) << "\n"
      << "delta_solver = " << (cfg.delta_solver == DeltaSolver::ClosedForm ? "closed-form" : "monte-carlo") << "\n"
      << "mc_samples = " << m.aggregation.mc_samples << "\n"
      << "mc_seed = " << m.aggregation.seed << "\n"
      << "tnet = " << (m.use_tnet ? "true" : "false") << "\n"
      << "tnet_point_widths = " << join(m.tnet_point_widths) << "\n"
      << "tnet_head_widths = " << join(m.tnet_head_widths) << "\n"
      << "reg_weight = " << fmt(m.reg_weight) << "\n"
      << "bn_eps = " << fmt(m.bn_eps) << "\n"
      << "bn_momentum = " << fmt(m.bn_momentum) << "\n\n"
      << "[data]\n";
  std::string classes;
  for (std::size_t i = 0; i < cfg.classes.size(); ++i) classes += (i ? "," : "") + std::string(to_string(cfg.classes[i]));
  out << "classes = " << classes << "\n"
      << "per_class = " << cfg.per_class << "\n"
      << "n_points = " << m.n_points << "\n"
      << "noise = " << fmt(cfg.noise) << "\n";
  if (!cfg.train_manifest.empty()) {
    out << "train_manifest = " << cfg.train_manifest << "\n"
        << "test_manifest = " << cfg.test_manifest << "\n"
        << "num_classes = " << m.num_classes << "\n";
  }
  out << "\n[train]\n"
      << "epochs = " << cfg.epochs << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "lr = " << fmt(cfg.lr) << "\n"
      << "seed = " << cfg.seed << "\n"
      << "output_dir = " << cfg.output_dir << "\n"
      << "report_every = " << cfg.report_every << "\n"
      << "probe_size = " << cfg.probe_size << "\n"
      << "divergence_guard = " << (cfg.divergence_guard ? "true" : "false") << "\n";
  return out.str();
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << to_ini(cfg);
}

}  // namespace bipoint
