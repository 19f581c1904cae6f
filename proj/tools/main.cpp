#include <CLI11.hpp>

#include <bipoint/aggregation.hpp>
#include <bipoint/checkpoint.hpp>
#include <bipoint/config.hpp>
#include <bipoint/deploy.hpp>
#include <bipoint/entropy.hpp>
#include <bipoint/error.hpp>
#include <bipoint/harness.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace bipoint;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

RunConfig config_or_default(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  cfg.resolve();
  return cfg;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw Error("cannot write '" + out_path + "'");
  f << text;
}

std::vector<std::size_t> split_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(tok, &pos);
    if (pos != tok.size()) throw ConfigError("bad list entry '" + tok + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("empty list '" + text + "'");
  return out;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

std::string eval_report(const EvalResult& r) {
  std::string out = "class,accuracy\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) out += std::to_string(c) + "," + fmt(r.per_class[c]) + "\n";
  out += "overall," + fmt(r.oa) + "\n";
  return out;
}

// Dataset for eval / entropy: config data fields, point count from the model.
Dataset dataset_for(RunConfig cfg, const ModelSpec& spec) {
  cfg.model.n_points = spec.n_points;
  const Dataset ds = load_dataset(cfg);
  if (ds.num_classes != spec.num_classes)
    throw ConfigError("dataset has " + std::to_string(ds.num_classes) + " classes, checkpoint expects " +
                      std::to_string(spec.num_classes));
  return ds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binarized point-cloud classifier toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, variant_text = "b", split = "test";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t epochs = 0;

  auto* train_cmd = app.add_subcommand("train", "train a model; writes metrics.csv, model.bpnt, config.ini");
  train_cmd->add_option("-c,--config", config_path, "INI config")->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--output", out_path, "output directory (overrides train.output_dir)");
  train_cmd->add_option("--seed", seed, "override train.seed")->each([&](const std::string&) { seed_set = true; });
  train_cmd->add_option("--epochs", epochs, "override train.epochs");
  bool quiet = false;
  train_cmd->add_flag("-q,--quiet", quiet, "no per-epoch lines");

  auto* eval_cmd = app.add_subcommand("eval", "overall and per-class accuracy of a checkpoint");
  eval_cmd->add_option("checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-c,--config", config_path, "INI config describing the data")->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("-o,--out", out_path, "CSV destination (default stdout)");

  std::string seeds_text = "1,2,3";
  auto* ablate_cmd = app.add_subcommand("ablate", "every method on every seed");
  ablate_cmd->add_option("-c,--config", config_path, "base INI config")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--seeds", seeds_text, "comma-separated seeds");
  ablate_cmd->add_option("-o,--out", out_path, "CSV destination (default stdout)");

  std::string sizes_text = "256,512,1024";
  std::size_t repeats = 5;
  auto* bench_cmd = app.add_subcommand("bench", "xnor GEMM against float GEMMs on square shapes");
  bench_cmd->add_option("--sizes", sizes_text, "comma-separated n = m = k");
  bench_cmd->add_option("--repeats", repeats, "timed repeats per kernel")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", seed);
  bench_cmd->add_option("-o,--out", out_path, "CSV destination (default stdout)");

  std::string pack_out;
  bool keep_f64 = false;
  auto* pack_cmd = app.add_subcommand("pack", "apply a deployment variant and report storage");
  pack_cmd->add_option("checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  pack_cmd->add_option("--variant", variant_text, "a..f")->check(CLI::IsMember({"a", "b", "c", "d", "e", "f"}));
  pack_cmd->add_option("-o,--out", pack_out, "deploy checkpoint path")->required();
  pack_cmd->add_flag("--no-round", keep_f64, "keep real parameters in double precision");

  std::size_t n_points = 1024, mc_samples = 100000;
  std::string solver = "closed-form";
  auto* delta_cmd = app.add_subcommand("solve-delta", "offset that balances sign(max) over n standard normals");
  delta_cmd->add_option("-n,--points", n_points)->check(CLI::PositiveNumber);
  delta_cmd->add_option("--solver", solver)->check(CLI::IsMember({"closed-form", "monte-carlo", "both"}));
  delta_cmd->add_option("--samples", mc_samples, "Monte Carlo trials")->check(CLI::PositiveNumber);
  delta_cmd->add_option("--seed", seed);

  double p_neg = 0.5;
  std::string n_list = "1,2,4,8,16,32,64,128,256,512,1024,2048,4096";
  auto* entropy_cmd = app.add_subcommand("analyze-entropy", "per-channel sign entropy of pooled features, or the max-pool curve");
  entropy_cmd->add_option("checkpoint", ckpt_path, "training checkpoint (omit for --curve)")->check(CLI::ExistingFile);
  entropy_cmd->add_option("-c,--config", config_path, "INI config describing the data")->check(CLI::ExistingFile);
  entropy_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  bool curve = false;
  entropy_cmd->add_flag("--curve", curve, "tabulate max-pool entropy against n instead");
  entropy_cmd->add_option("--p-neg", p_neg, "P(x < 0) per point for --curve")->check(CLI::Range(0.0, 1.0));
  entropy_cmd->add_option("--n", n_list, "comma-separated n for --curve");
  entropy_cmd->add_option("-o,--out", out_path, "CSV destination (default stdout)");

  auto* info_cmd = app.add_subcommand("info", "print a checkpoint summary");
  info_cmd->add_option("checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) {
      RunConfig cfg = config_or_default(config_path);
      if (!out_path.empty()) cfg.output_dir = out_path;
      if (seed_set) cfg.seed = seed;
      if (epochs) cfg.epochs = epochs;
      TrainOptions opts;
      opts.progress = quiet ? nullptr : &std::cerr;
      opts.write_outputs = true;
      const TrainResult r = train(cfg, opts);
      std::cout << "test_oa," << fmt(r.test_oa) << "\noutput," << cfg.output_dir << "\n";
    } else if (*eval_cmd) {
      const RunConfig cfg = config_or_default(config_path);
      Checkpoint ck = load_checkpoint(ckpt_path);
      EvalResult r;
      if (auto* m = std::get_if<Model>(&ck)) {
        const Dataset ds = dataset_for(cfg, m->spec());
        r = evaluate(*m, split == "train" ? ds.train : ds.test);
      } else {
        const auto& d = std::get<DeployModel>(ck);
        const Dataset ds = dataset_for(cfg, d.spec);
        r = evaluate(d, split == "train" ? ds.train : ds.test);
      }
      emit(eval_report(r), out_path);
    } else if (*ablate_cmd) {
      const RunConfig cfg = config_or_default(config_path);
      std::vector<std::uint64_t> seeds;
      for (auto s : split_sizes(seeds_text)) seeds.push_back(s);
      const auto rows = ablate(cfg, seeds, &std::cerr);
      emit(ablation_csv(rows), out_path);
    } else if (*bench_cmd) {
      std::vector<BenchRow> rows;
      for (auto s : split_sizes(sizes_text)) {
        rows.push_back(bench_gemm(s, s, s, repeats, seed));
        if (!rows.back().verified) throw Error("xnor_gemm disagreed with the float result at size " + std::to_string(s));
      }
      emit(bench_csv(rows), out_path);
    } else if (*pack_cmd) {
      const Model m = load_model(ckpt_path);
      DeployOptions opts;
      opts.round_to_f32 = !keep_f64;
      const DeployModel d = apply_deployment(m, parse_variant(variant_text), opts);
      save_checkpoint(d, pack_out);
      const StorageReport rep = storage_report(d);
      std::cout << "variant,bytes,mb,ratio\n"
                << to_string(rep.variant) << "," << rep.total_bytes << "," << fmt(rep.total_mb()) << ","
                << fmt(rep.ratio(), 4) << "\n";
    } else if (*delta_cmd) {
      std::cout << "n,solver,delta\n";
      if (solver != "monte-carlo") std::cout << n_points << ",closed-form," << fmt(solve_delta_max_cf(n_points), 10) << "\n";
      if (solver != "closed-form")
        std::cout << n_points << ",monte-carlo," << fmt(solve_delta_max_mc(n_points, mc_samples, seed), 10) << "\n";
    } else if (*entropy_cmd) {
      std::ostringstream csv;
      csv << "context,channel,p_pos,entropy_bits\n";
      if (curve) {
        for (auto n : split_sizes(n_list)) {
          const double pn = std::pow(p_neg, static_cast<double>(n));
          csv << "maxpool,n=" << n << "," << fmt(1.0 - pn, 10) << "," << fmt(maxpool_entropy(n, p_neg), 10) << "\n";
        }
      } else {
        if (ckpt_path.empty()) throw ConfigError("analyze-entropy: give a checkpoint or --curve");
        const RunConfig cfg = config_or_default(config_path);
        Model m = load_model(ckpt_path);
        const Dataset ds = dataset_for(cfg, m.spec());
        const auto& clouds = split == "train" ? ds.train : ds.test;
        ForwardResult out;
        {
          NoGradGuard ng;
          out = m.forward(stack_points(clouds), clouds.size(), Mode::Eval);
        }
        const std::string ctx = std::string(to_string(m.spec().aggregation.kind)) + "/" + split;
        const EntropyReport rep = measure_feature_entropy(out.pooled, ctx);
        double mean_p = 0.0;
        for (std::size_t c = 0; c < rep.p_pos.size(); ++c) {
          csv << ctx << "," << c << "," << fmt(rep.p_pos[c]) << "," << fmt(rep.entropy_bits[c]) << "\n";
          mean_p += rep.p_pos[c];
        }
        csv << ctx << ",mean," << fmt(mean_p / static_cast<double>(rep.p_pos.size())) << "," << fmt(rep.mean_entropy) << "\n";
      }
      emit(csv.str(), out_path);
    } else if (*info_cmd) {
      std::cout << describe(load_checkpoint(ckpt_path));
    }
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
