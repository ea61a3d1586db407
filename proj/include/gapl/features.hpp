#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gapl/tensor.hpp"

namespace gapl {

// One sample of frozen features: global vector f, patch tokens F.
struct FeatureBundle {
  std::uint32_t label = 0;
  std::uint32_t domain = 0;
  Tensor f;   // [d]
  Tensor F;   // [N x d]
};

struct FeatureDataset {
  std::uint32_t d = 0;
  std::uint32_t N = 0;
  std::uint32_t M = 0;
  std::uint32_t D = 0;
  Tensor w_fixed;  // [M x d], fixed template text bank
  std::vector<FeatureBundle> samples;

  void validate() const;
};

// Synthetic multi-domain generation recipe. Per-domain style is an affine
// per-channel transform; explicit style vectors override the seeded draw.
struct GenSpec {
  std::uint32_t d = 64;
  std::uint32_t N = 49;
  std::uint32_t M = 10;
  std::uint32_t D = 2;
  std::uint32_t shots = 16;       // train samples per class per domain
  std::uint32_t test_shots = 16;  // test samples per class per domain
  double sigma_class = 0.3;       // prototype spread around basis anchors
  double sigma_patch = 0.4;       // per-component patch noise
  double style_scale_spread = 0.2;
  double style_shift_spread = 0.05;
  std::vector<std::vector<double>> style_scale;  // D x d, optional
  std::vector<std::vector<double>> style_shift;  // D x d, optional
  std::uint64_t seed = 0;

  static GenSpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct GeneratedData {
  FeatureDataset train;
  std::vector<FeatureDataset> test_per_domain;
  Tensor prototypes;  // [M x d] class prototypes the samples were drawn from
};

GeneratedData generate(const GenSpec& spec);

// Concatenates datasets with identical extents and text bank.
FeatureDataset merge(const std::vector<FeatureDataset>& parts);

// "GFEA v1" container, little-endian, layout:
// magic "GFEA", u32 version=1, u32 d, u32 N, u32 M, u32 D, u64 S,
// then w_fixed as M*d f64, then S records of
// {u32 label, u32 domain, d f64 f, N*d f64 F}. No padding.
void write_features(const std::string& path, const FeatureDataset& ds);
FeatureDataset read_features(const std::string& path);

// Expected file size in bytes for the layout above.
std::size_t gfea_file_size(std::uint32_t d, std::uint32_t n, std::uint32_t m,
                           std::uint64_t sample_count);

// Euclidean distance between the means of two groups of vectors.
double centroid_gap(const std::vector<const Tensor*>& group_a,
                    const std::vector<const Tensor*>& group_b);

// First-order gap for one class between two domains (means of f).
double centroid_gap_first_order(const FeatureDataset& ds, std::uint32_t label,
                                std::uint32_t domain_a, std::uint32_t domain_b);

}  // namespace gapl
