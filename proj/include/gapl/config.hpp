#pragma once

#include <cstdint>
#include <string>

#include "gapl/errors.hpp"

namespace gapl {

enum class DescriptorMode : std::uint8_t { kDiag = 0, kDiagVar = 1, kFull = 2 };

std::string descriptor_mode_name(DescriptorMode mode);
DescriptorMode descriptor_mode_from_name(const std::string& name);

// Which prediction streams participate (global, gram, contextual).
struct StreamSet {
  bool global = true;
  bool gram = true;
  bool ctx = true;

  int count() const { return int(global) + int(gram) + int(ctx); }
  bool operator==(const StreamSet&) const = default;

  // Parses "g,s,c" / "g,c" style lists (g=global, s=gram, c=contextual).
  static StreamSet parse(const std::string& text);
  std::string to_string() const;
};

// Every hyperparameter of the model and its training run.
struct TrainConfig {
  double alpha = 0.7;
  double tau = 0.01;
  double epsilon = 1e-6;
  std::uint32_t K = 4;  // contextual branches
  std::uint32_t P = 8;  // tokens per local signal
  DescriptorMode descriptor_mode = DescriptorMode::kDiag;
  std::uint32_t h_s = 0;  // style gate hidden extent; 0 = max(d/4, 8)
  std::uint32_t h_c = 0;  // contextual output net hidden extent; 0 = auto
  std::uint32_t h_b = 64;
  double T_bw = 1.0;
  double T_global = 1.0;
  double T_gram = 1.0;
  double T_ctx = 1.0;
  double lambda_fused = 1.0;
  double lambda_txt = 25.0;
  double lambda_img = 10.0;
  double learning_rate = 0.002;
  // The text regularizer has piecewise-constant gradients; momentum turns
  // it into a limit cycle on the plateau, so the pinned default is 0.
  double momentum = 0.0;
  std::uint32_t epochs = 50;
  std::uint32_t batch_size = 32;
  std::uint64_t seed = 0;
  StreamSet streams;
  std::uint32_t full_gram_limit = 64;

  void validate() const;
  std::uint32_t gate_hidden(std::uint32_t d) const;
  std::uint32_t ctx_hidden(std::uint32_t d) const;
  // Gate input extent for the configured descriptor mode.
  std::size_t gate_input_extent(std::uint32_t d) const;

  std::string to_json_text() const;
  static TrainConfig from_json_text(const std::string& text);

  // FNV-1a hash of the canonical JSON form; stamps reports and ablation rows.
  std::uint64_t hash() const;
};

}  // namespace gapl
