#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gapl/config.hpp"
#include "gapl/features.hpp"
#include "gapl/forward.hpp"
#include "gapl/model.hpp"

namespace gapl {

// Metrics of a pure evaluation pass in train mode. Accuracies are in
// percent; inactive streams report -1.
struct EpochLog {
  double loss = 0.0;
  double acc_global = -1.0;
  double acc_gram = -1.0;
  double acc_ctx = -1.0;
  double acc_fused = 0.0;
};

struct Checkpoint {
  ModelParams params;
  GradMap momentum;  // one buffer per parameter tensor, same names
  TrainConfig cfg;
  std::uint64_t epoch = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  // epoch_logs[e]: metrics with the parameters at the start of epoch e+1,
  // over that epoch's shuffled batch sequence, before any update.
  std::vector<EpochLog> epoch_logs;
  EpochLog final_log;  // after the last update
};

// v <- mu * v + g;  p <- p - lr * v
void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                double lr, double mu);

// Deterministic mini-batch SGD over all parameter groups. A non-empty
// class mask restricts training to those classes (base/novel protocol).
TrainResult train(const FeatureDataset& data, const TrainConfig& cfg,
                  const std::vector<std::uint8_t>& class_mask = {});

// "GCKP v1" container, little-endian:
// magic "GCKP", u32 version=1, u32 tensor-count; per tensor u16 name length,
// UTF-8 name, u8 rank, rank x u32 extents, f64 payload row-major; then
// u32 config-json-length, UTF-8 JSON config snapshot, u64 epoch counter.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct GradcheckReport {
  bool pass = false;
  double tol = 0.0;
  double max_rel_err = 0.0;
  std::string worst_group;
  std::map<std::string, double> per_group;  // max rel err per group
};

// Finite-difference check of the full objective on an internally built
// tiny instance (d=8, N=6, M=3, K=2, P=2), per parameter group.
GradcheckReport run_gradcheck(std::uint64_t seed, double tol = 1e-4);

// Maps a tensor name to its reporting group: w_learn, gate, local_signals,
// attention, ctx_net or fusion_net.
std::string gradcheck_group(const std::string& tensor_name);

}  // namespace gapl
