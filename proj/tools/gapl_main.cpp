// Command-line harness: synthetic data generation, training, evaluation,
// gradient checking, ablation sweeps and anchor dumps.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <omp.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gapl/eval.hpp"
#include "gapl/features.hpp"
#include "gapl/kernels.hpp"
#include "gapl/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFormat = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitResourceGuard = 4;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gapl::FormatError("cannot open file: " + path, 0);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gapl::FormatError("cannot write file: " + path, 0);
  out << text;
}

std::string derived_test_path(const std::string& out) {
  std::size_t dot = out.rfind('.');
  std::size_t slash = out.rfind('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return out + ".test";
  return out.substr(0, dot) + ".test" + out.substr(dot);
}

std::vector<std::uint32_t> read_split_manifest(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(slurp(path));
  if (j.is_object() && j.contains("base_classes")) j = j["base_classes"];
  if (!j.is_array())
    throw gapl::FormatError("split manifest must be a JSON list of base "
                            "class ids: " + path, 0);
  return j.get<std::vector<std::uint32_t>>();
}

std::vector<std::uint8_t> mask_from_manifest(
    const std::vector<std::uint32_t>& base, std::uint32_t M) {
  std::vector<std::uint8_t> mask(M, 0);
  for (std::uint32_t c : base) {
    gapl::check_contract(c < M, "split manifest: class id out of range");
    mask[c] = 1;
  }
  return mask;
}

int run(int argc, char** argv) {
  CLI::App app{"Gram-anchored prompt-learning head stack"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "OpenMP thread count (0 = library default)");

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_spec_path, gen_out, gen_out_test;
  gen->add_option("--spec", gen_spec_path, "GenSpec JSON file")->required();
  gen->add_option("--out", gen_out, "output feature file (train split)")
      ->required();
  gen->add_option("--out-test", gen_out_test,
                  "output feature file for the test split "
                  "(default: <out>.test.gfea)");

  // train
  auto* tr = app.add_subcommand("train", "train on a feature file");
  std::string tr_data, tr_cfg_path, tr_out, tr_streams, tr_split;
  tr->add_option("--data", tr_data, "training feature file")->required();
  tr->add_option("--config", tr_cfg_path, "TrainConfig JSON file");
  tr->add_option("--out", tr_out, "output checkpoint path")->required();
  tr->add_option("--streams", tr_streams, "active streams, e.g. g,s,c");
  tr->add_option("--split", tr_split, "base-class manifest (JSON list)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_data, ev_ckpt, ev_report, ev_streams, ev_split;
  double ev_alpha = -1.0;
  ev->add_option("--data", ev_data, "feature file")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--alpha", ev_alpha, "override text fusion weight");
  ev->add_option("--streams", ev_streams, "override active streams");
  ev->add_option("--split", ev_split, "base-class manifest (JSON list)");
  ev->add_option("--report", ev_report, "write the JSON report here");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference gradient check");
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "instance seed");
  gc->add_option("--tol", gc_tol, "max relative error tolerance");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation suite");
  std::string ab_suite, ab_data, ab_test, ab_out, ab_cfg_path;
  ab->add_option("--suite", ab_suite, "streams | alpha | descriptor")
      ->required();
  ab->add_option("--data", ab_data, "training feature file")->required();
  ab->add_option("--test", ab_test,
                 "test feature file (default: <data stem>.test.gfea)");
  ab->add_option("--config", ab_cfg_path, "base TrainConfig JSON file");
  ab->add_option("--out", ab_out, "output CSV path")->required();

  // dump-anchors
  auto* da = app.add_subcommand("dump-anchors",
                                "export per-sample anchors for analysis");
  std::string da_data, da_ckpt, da_out;
  double da_alpha = -1.0;
  da->add_option("--data", da_data, "feature file")->required();
  da->add_option("--ckpt", da_ckpt, "checkpoint file")->required();
  da->add_option("--out", da_out, "output anchor file")->required();
  da->add_option("--alpha", da_alpha, "override text fusion weight");

  app.parse(argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  if (*gen) {
    gapl::GenSpec spec = gapl::GenSpec::from_json_text(slurp(gen_spec_path));
    gapl::GeneratedData data = gapl::generate(spec);
    gapl::write_features(gen_out, data.train);
    std::string test_path =
        gen_out_test.empty() ? derived_test_path(gen_out) : gen_out_test;
    gapl::write_features(test_path, gapl::merge(data.test_per_domain));
    std::printf("wrote %s (%zu train samples) and %s (%zu test samples)\n",
                gen_out.c_str(), data.train.samples.size(), test_path.c_str(),
                gapl::merge(data.test_per_domain).samples.size());
    return kExitOk;
  }

  if (*tr) {
    gapl::FeatureDataset data = gapl::read_features(tr_data);
    gapl::TrainConfig cfg;
    if (!tr_cfg_path.empty())
      cfg = gapl::TrainConfig::from_json_text(slurp(tr_cfg_path));
    if (!tr_streams.empty()) cfg.streams = gapl::StreamSet::parse(tr_streams);
    std::vector<std::uint8_t> mask;
    if (!tr_split.empty())
      mask = mask_from_manifest(read_split_manifest(tr_split), data.M);
    gapl::TrainResult result = gapl::train(data, cfg, mask);
    for (std::size_t e = 0; e < result.epoch_logs.size(); ++e) {
      const gapl::EpochLog& log = result.epoch_logs[e];
      std::printf("epoch %3zu/%u  loss %.9f  fused %.2f\n", e + 1, cfg.epochs,
                  log.loss, log.acc_fused);
    }
    std::printf("final loss %.9f  fused %.2f\n", result.final_log.loss,
                result.final_log.acc_fused);
    gapl::save_checkpoint(tr_out, result.checkpoint);
    std::printf("checkpoint written to %s\n", tr_out.c_str());
    return kExitOk;
  }

  if (*ev) {
    gapl::FeatureDataset data = gapl::read_features(ev_data);
    gapl::Checkpoint ckpt = gapl::load_checkpoint(ev_ckpt);
    gapl::EvalOptions opt;
    if (ev->count("--alpha")) {
      gapl::check_contract(ev_alpha >= 0.0 && ev_alpha <= 1.0,
                           "eval: --alpha must lie in [0,1]");
      opt.alpha_override = ev_alpha;
    }
    if (!ev_streams.empty())
      opt.streams_override = gapl::StreamSet::parse(ev_streams);
    if (!ev_split.empty()) opt.base_classes = read_split_manifest(ev_split);
    gapl::EvalReport report = gapl::evaluate(data, ckpt, opt);
    std::fputs(gapl::report_text(report).c_str(), stdout);
    if (!ev_report.empty()) spill(ev_report, gapl::report_json(report));
    return kExitOk;
  }

  if (*gc) {
    gapl::GradcheckReport report = gapl::run_gradcheck(gc_seed, gc_tol);
    for (const auto& [group, err] : report.per_group)
      std::printf("%-14s max rel err %.3e  %s\n", group.c_str(), err,
                  err < report.tol ? "ok" : "FAIL");
    if (!report.pass) {
      std::fprintf(stderr, "gradcheck FAILED: group %s exceeds tol %.1e\n",
                   report.worst_group.c_str(), report.tol);
      return kExitNumeric;
    }
    std::printf("gradcheck passed (max rel err %.3e, tol %.1e)\n",
                report.max_rel_err, report.tol);
    return kExitOk;
  }

  if (*ab) {
    gapl::AblationSpec spec;
    spec.suite = gapl::ablation_suite_from_name(ab_suite);
    gapl::FeatureDataset train_data = gapl::read_features(ab_data);
    std::string test_path =
        ab_test.empty() ? derived_test_path(ab_data) : ab_test;
    gapl::FeatureDataset test_data = gapl::read_features(test_path);
    gapl::TrainConfig cfg;
    if (!ab_cfg_path.empty())
      cfg = gapl::TrainConfig::from_json_text(slurp(ab_cfg_path));
    std::string csv = gapl::run_ablation(spec, train_data, test_data, cfg);
    spill(ab_out, csv);
    std::fputs(csv.c_str(), stdout);
    return kExitOk;
  }

  if (*da) {
    gapl::FeatureDataset data = gapl::read_features(da_data);
    gapl::Checkpoint ckpt = gapl::load_checkpoint(da_ckpt);
    std::optional<double> alpha;
    if (da->count("--alpha")) alpha = da_alpha;
    gapl::dump_anchors(da_out, data, ckpt, alpha);
    std::printf("anchors written to %s\n", da_out.c_str());
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    CLI::App dummy;
    dummy.exit(e);  // prints help/error text
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  } catch (const gapl::ResourceGuardError& e) {
    std::fprintf(stderr, "resource guard: %s\n", e.what());
    return kExitResourceGuard;
  } catch (const gapl::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitFormat;
  } catch (const gapl::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
}
