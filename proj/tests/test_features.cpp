#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gapl/features.hpp"
#include "gapl/stream_gram.hpp"

using namespace gapl;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("feat_test_") + name;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

GenSpec canonical_spec() {
  GenSpec spec;
  spec.d = 64;
  spec.N = 49;
  spec.M = 10;
  spec.D = 2;
  spec.shots = 16;
  spec.test_shots = 16;
  spec.seed = 7;
  return spec;
}

bool datasets_equal(const FeatureDataset& a, const FeatureDataset& b) {
  if (a.d != b.d || a.N != b.N || a.M != b.M || a.D != b.D) return false;
  if (a.samples.size() != b.samples.size()) return false;
  if (max_abs_diff(a.w_fixed, b.w_fixed) != 0.0) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const FeatureBundle& x = a.samples[i];
    const FeatureBundle& y = b.samples[i];
    if (x.label != y.label || x.domain != y.domain) return false;
    if (max_abs_diff(x.f, y.f) != 0.0) return false;
    if (max_abs_diff(x.F, y.F) != 0.0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("generator is byte-deterministic for equal specs") {
  GenSpec spec = canonical_spec();
  spec.shots = 2;
  spec.test_shots = 2;
  GeneratedData a = generate(spec);
  GeneratedData b = generate(spec);
  std::string pa = tmp_path("det_a.gfea"), pb = tmp_path("det_b.gfea");
  write_features(pa, a.train);
  write_features(pb, b.train);
  CHECK(file_bytes(pa) == file_bytes(pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("noiseless single-domain samples sit on their class prototype") {
  GenSpec spec;
  spec.d = 16;
  spec.N = 5;
  spec.M = 4;
  spec.D = 1;
  spec.shots = 3;
  spec.test_shots = 1;
  spec.sigma_patch = 0.0;
  spec.style_scale.assign(1, std::vector<double>(spec.d, 1.0));
  spec.style_shift.assign(1, std::vector<double>(spec.d, 0.0));
  spec.seed = 5;
  GeneratedData data = generate(spec);
  for (const FeatureBundle& x : data.train.samples) {
    for (std::size_t j = 0; j < spec.d; ++j) {
      CHECK(x.f[j] ==
            doctest::Approx(data.prototypes.at(x.label, j)).epsilon(1e-15));
    }
    // patch rows are exact copies of the prototype
    for (std::size_t n = 0; n < spec.N; ++n)
      for (std::size_t j = 0; j < spec.d; ++j)
        CHECK(x.F.at(n, j) == data.prototypes.at(x.label, j));
  }
}

TEST_CASE("canonical spec reaches 99% nearest-prototype accuracy") {
  GeneratedData data = generate(canonical_spec());
  std::size_t hits = 0, total = 0;
  for (const FeatureDataset& test : data.test_per_domain) {
    for (const FeatureBundle& x : test.samples) {
      // brute-force nearest prototype under cosine with the fixed bank
      double best = -2.0;
      std::uint32_t best_c = 0;
      for (std::uint32_t c = 0; c < test.M; ++c) {
        double dot = 0, nw = 0, nf = 0;
        for (std::size_t j = 0; j < test.d; ++j) {
          dot += test.w_fixed.at(c, j) * x.f[j];
          nw += test.w_fixed.at(c, j) * test.w_fixed.at(c, j);
          nf += x.f[j] * x.f[j];
        }
        double cosv = dot / std::sqrt(nw * nf);
        if (cosv > best) {
          best = cosv;
          best_c = c;
        }
      }
      hits += best_c == x.label;
      total += 1;
    }
  }
  CHECK(double(hits) / double(total) >= 0.99);
}

TEST_CASE("generator refuses M > d") {
  GenSpec spec;
  spec.d = 4;
  spec.M = 5;
  CHECK_THROWS_AS((void)generate(spec), ContractError);
}

TEST_CASE("uniform style scaling multiplies channel energy by c^2") {
  GenSpec base;
  base.d = 12;
  base.N = 6;
  base.M = 3;
  base.D = 1;
  base.shots = 4;
  base.test_shots = 1;
  base.seed = 17;
  base.style_scale.assign(1, std::vector<double>(base.d, 1.0));
  base.style_shift.assign(1, std::vector<double>(base.d, 0.0));
  GeneratedData plain = generate(base);

  const double c = 3.0;
  GenSpec scaled = base;
  scaled.style_scale.assign(1, std::vector<double>(base.d, c));
  GeneratedData styled = generate(scaled);

  for (std::size_t i = 0; i < plain.train.samples.size(); ++i) {
    const Tensor& F0 = plain.train.samples[i].F;
    const Tensor& F1 = styled.train.samples[i].F;
    GramDescriptor d0 = gram_descriptor(F0, DescriptorMode::kDiag, 64);
    GramDescriptor d1 = gram_descriptor(F1, DescriptorMode::kDiag, 64);
    for (std::size_t j = 0; j < base.d; ++j)
      CHECK(d1.g_diag[j] ==
            doctest::Approx(c * c * d0.g_diag[j]).epsilon(1e-10));

    // pairwise patch cosines are untouched by a uniform scale
    for (std::size_t p = 0; p < base.N; ++p) {
      for (std::size_t q = p + 1; q < base.N; ++q) {
        double dot0 = 0, n00 = 0, n01 = 0, dot1 = 0, n10 = 0, n11 = 0;
        for (std::size_t j = 0; j < base.d; ++j) {
          dot0 += F0.at(p, j) * F0.at(q, j);
          n00 += F0.at(p, j) * F0.at(p, j);
          n01 += F0.at(q, j) * F0.at(q, j);
          dot1 += F1.at(p, j) * F1.at(q, j);
          n10 += F1.at(p, j) * F1.at(p, j);
          n11 += F1.at(q, j) * F1.at(q, j);
        }
        double cos0 = dot0 / std::sqrt(n00 * n01);
        double cos1 = dot1 / std::sqrt(n10 * n11);
        CHECK(std::fabs(cos0 - cos1) < 1e-10);
      }
    }
  }
}

TEST_CASE("feature file round-trip is value-exact") {
  GenSpec spec;
  spec.d = 8;
  spec.N = 3;
  spec.M = 4;
  spec.D = 2;
  spec.shots = 2;
  spec.test_shots = 1;
  spec.seed = 23;
  FeatureDataset ds = generate(spec).train;
  std::string path = tmp_path("roundtrip.gfea");
  write_features(path, ds);
  FeatureDataset back = read_features(path);
  CHECK(datasets_equal(ds, back));
  std::remove(path.c_str());
}

TEST_CASE("bad magic raises a format error") {
  std::string path = tmp_path("badmagic.gfea");
  {
    std::ofstream out(path, std::ios::binary);
    out << "XXXX this is not a feature file";
  }
  CHECK_THROWS_AS((void)read_features(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("truncated file raises a format error naming the offset") {
  GenSpec spec;
  spec.d = 4;
  spec.N = 2;
  spec.M = 2;
  spec.D = 1;
  spec.shots = 2;
  spec.test_shots = 1;
  spec.seed = 3;
  FeatureDataset ds = generate(spec).train;
  std::string path = tmp_path("trunc.gfea");
  write_features(path, ds);
  std::string bytes = file_bytes(path);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(),
              static_cast<std::streamsize>(bytes.size() - 13));
  }
  try {
    (void)read_features(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("minimal dataset file size matches the layout arithmetic") {
  GenSpec spec;
  spec.d = 2;
  spec.N = 1;
  spec.M = 1;
  spec.D = 1;
  spec.shots = 1;
  spec.test_shots = 1;
  spec.seed = 1;
  FeatureDataset ds = generate(spec).train;
  REQUIRE(ds.samples.size() == 1);
  std::string path = tmp_path("minimal.gfea");
  write_features(path, ds);
  std::string bytes = file_bytes(path);
  // header(32) + bank(M*d*8 = 16) + record(4+4 + d*8 + N*d*8 = 40)
  CHECK(bytes.size() == 88);
  CHECK(bytes.size() == gfea_file_size(2, 1, 1, 1));
  std::remove(path.c_str());
}

TEST_CASE("centroid gap basics") {
  Tensor a = Tensor::vector({0, 0});
  Tensor b = Tensor::vector({3, 4});
  CHECK(centroid_gap({&a}, {&a}) == 0.0);
  CHECK(centroid_gap({&a}, {&b}) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK_THROWS_AS((void)centroid_gap({}, {&a}), DegenerateInputError);
}

TEST_CASE("first-order centroid gap over a dataset") {
  GenSpec spec = canonical_spec();
  spec.shots = 4;
  spec.test_shots = 1;
  FeatureDataset ds = generate(spec).train;
  // identical sample sets in both domains would give 0; here the styled
  // domains must be separated
  double gap = centroid_gap_first_order(ds, 0, 0, 1);
  CHECK(gap > 0.0);
  // same domain on both sides -> identical centroids
  CHECK(centroid_gap_first_order(ds, 0, 1, 1) == 0.0);
}

TEST_CASE("merge concatenates datasets with matching extents") {
  GenSpec spec;
  spec.d = 8;
  spec.N = 2;
  spec.M = 3;
  spec.D = 2;
  spec.shots = 1;
  spec.test_shots = 2;
  spec.seed = 9;
  GeneratedData data = generate(spec);
  FeatureDataset all = merge(data.test_per_domain);
  CHECK(all.samples.size() == 2u * 3u * 2u);
}
