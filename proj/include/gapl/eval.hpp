#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gapl/features.hpp"
#include "gapl/trainer.hpp"

namespace gapl {

struct EvalOptions {
  std::optional<double> alpha_override;
  std::optional<StreamSet> streams_override;
  // Base class ids; non-empty enables the base/novel split protocol
  // (novel classes are matched with the fixed bank, alpha forced to 0).
  std::vector<std::uint32_t> base_classes;
  bool compute_gaps = true;
};

struct ClassGap {
  std::uint32_t label = 0;
  double first_order = 0.0;
  double anchored = 0.0;
};

struct EvalReport {
  std::vector<double> per_domain_acc;  // fused top-1 percent; -1 = no samples
  double acc_global = -1.0;
  double acc_gram = -1.0;
  double acc_ctx = -1.0;
  double acc_fused = 0.0;
  bool has_split = false;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
  std::vector<ClassGap> gaps;  // domains (0,1), classes present in both
  std::string config_json;
  std::uint64_t config_hash = 0;
  double runtime_seconds = 0.0;  // excluded from the hashed region
};

EvalReport evaluate(const FeatureDataset& data, const Checkpoint& ckpt,
                    const EvalOptions& opt = {});

// 2*b*n/(b+n); inputs in [0,100], not both zero.
double harmonic_mean(double base, double novel);

// JSON form: {"report": <deterministic object>, "runtime_seconds": ...}.
// The config hash inside "report" covers only deterministic fields.
std::string report_json(const EvalReport& report);
std::string report_text(const EvalReport& report);

// ---- anchor dump ("GANC v1", GCKP-style tensor records) ------------------

struct AnchorDump {
  Tensor f;        // [S x d]
  Tensor gamma;    // [S x d]
  Tensor a_style;  // [S x d], row for each sample's ground-truth class
  Tensor label;    // [S]
  Tensor domain;   // [S]
  Tensor a_ctx;    // [K x M x d], per-branch contextual anchors
};

void dump_anchors(const std::string& path, const FeatureDataset& data,
                  const Checkpoint& ckpt,
                  std::optional<double> alpha_override = {});
AnchorDump read_anchors(const std::string& path);

double centroid_gap_anchored(const AnchorDump& dump, std::uint32_t label,
                             std::uint32_t domain_a, std::uint32_t domain_b);

// ---- ablation suites -------------------------------------------------------

enum class AblationSuite { kStreams, kAlpha, kDescriptor };
AblationSuite ablation_suite_from_name(const std::string& name);

struct AblationSpec {
  AblationSuite suite = AblationSuite::kStreams;
  std::vector<double> alpha_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
};

// Trains and evaluates every grid point under the shared seed; returns CSV.
// A guarded full-Gram point reports RESOURCE_GUARD in its value cells; any
// other per-row failure is recorded in-row and the suite continues.
std::string run_ablation(const AblationSpec& spec,
                         const FeatureDataset& train_data,
                         const FeatureDataset& test_data,
                         const TrainConfig& base_cfg);

}  // namespace gapl
