#include "gapl/features.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "binio.hpp"
#include "gapl/rng.hpp"

namespace gapl {

using nlohmann::json;

void FeatureDataset::validate() const {
  check_contract(w_fixed.rank() == 2 && w_fixed.rows() == M &&
                     w_fixed.cols() == d,
                 "FeatureDataset: text bank shape mismatch");
  for (std::size_t c = 0; c < M; ++c) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      norm2 += w_fixed.at(c, j) * w_fixed.at(c, j);
    if (norm2 == 0.0)
      throw DegenerateInputError("FeatureDataset: zero-norm text row " +
                                 std::to_string(c));
  }
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const FeatureBundle& b = samples[s];
    check_contract(b.label < M && b.domain < D,
                   "FeatureDataset: sample " + std::to_string(s) +
                       " has out-of-range label or domain");
    check_contract(b.f.rank() == 1 && b.f.numel() == d &&
                       b.F.rank() == 2 && b.F.rows() == N && b.F.cols() == d,
                   "FeatureDataset: sample " + std::to_string(s) +
                       " has wrong extents");
    if (!b.f.all_finite() || !b.F.all_finite())
      throw NumericError("FeatureDataset: non-finite sample " +
                         std::to_string(s));
  }
}

GenSpec GenSpec::from_json_text(const std::string& text) {
  json j = json::parse(text);
  GenSpec s;
  s.d = j.value("d", s.d);
  s.N = j.value("N", s.N);
  s.M = j.value("M", s.M);
  s.D = j.value("D", s.D);
  s.shots = j.value("shots", s.shots);
  s.test_shots = j.value("test_shots", s.shots);
  s.sigma_class = j.value("sigma_class", s.sigma_class);
  s.sigma_patch = j.value("sigma_patch", s.sigma_patch);
  s.style_scale_spread = j.value("style_scale_spread", s.style_scale_spread);
  s.style_shift_spread = j.value("style_shift_spread", s.style_shift_spread);
  if (j.contains("style_scale"))
    s.style_scale = j["style_scale"].get<std::vector<std::vector<double>>>();
  if (j.contains("style_shift"))
    s.style_shift = j["style_shift"].get<std::vector<std::vector<double>>>();
  s.seed = j.value("seed", s.seed);
  return s;
}

std::string GenSpec::to_json_text() const {
  json j;
  j["d"] = d;
  j["N"] = N;
  j["M"] = M;
  j["D"] = D;
  j["shots"] = shots;
  j["test_shots"] = test_shots;
  j["sigma_class"] = sigma_class;
  j["sigma_patch"] = sigma_patch;
  j["style_scale_spread"] = style_scale_spread;
  j["style_shift_spread"] = style_shift_spread;
  if (!style_scale.empty()) j["style_scale"] = style_scale;
  if (!style_shift.empty()) j["style_shift"] = style_shift;
  j["seed"] = seed;
  return j.dump();
}

namespace {

void validate_spec(const GenSpec& spec) {
  check_contract(spec.d > 0 && spec.N > 0 && spec.M > 0 && spec.D > 0,
                 "GenSpec: extents must be positive");
  if (spec.M > spec.d)
    throw ContractError(
        "GenSpec: M > d; prototype construction needs d >= M");
  check_contract(spec.sigma_class >= 0.0 && spec.sigma_patch >= 0.0,
                 "GenSpec: sigmas must be nonnegative");
  auto check_style = [&](const std::vector<std::vector<double>>& v,
                         const char* name, bool positive) {
    if (v.empty()) return;
    check_contract(v.size() == spec.D, std::string("GenSpec: ") + name +
                                           " must have D rows");
    for (const auto& row : v) {
      check_contract(row.size() == spec.d,
                     std::string("GenSpec: ") + name + " rows must have d entries");
      if (positive)
        for (double x : row)
          check_contract(x > 0.0, std::string("GenSpec: ") + name +
                                      " must be strictly positive");
    }
  };
  check_style(spec.style_scale, "style_scale", true);
  check_style(spec.style_shift, "style_shift", false);
}

void normalize_rows_inplace(Tensor& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) n2 += m.at(r, c) * m.at(r, c);
    double inv = 1.0 / std::sqrt(n2);
    for (std::size_t c = 0; c < m.cols(); ++c) m.at(r, c) *= inv;
  }
}

FeatureBundle make_sample(const Tensor& prototypes, std::uint32_t label,
                          std::uint32_t dom, const Tensor& style_scale,
                          const Tensor& style_shift, const GenSpec& spec,
                          Rng& rng) {
  std::size_t d = spec.d, N = spec.N;
  FeatureBundle b;
  b.label = label;
  b.domain = dom;
  b.F = Tensor({N, d});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t j = 0; j < d; ++j) {
      double v = prototypes.at(label, j) + spec.sigma_patch * rng.normal();
      b.F.at(n, j) = v * style_scale.at(dom, j) + style_shift.at(dom, j);
    }
  }
  // f is the mean of the patch rows.
  b.f = Tensor({d});
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) acc += b.F.at(n, j);
    b.f[j] = acc / static_cast<double>(N);
  }
  return b;
}

}  // namespace

GeneratedData generate(const GenSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);
  std::size_t d = spec.d, M = spec.M, D = spec.D;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Class prototypes: unit directions spread around distinct basis anchors.
  Tensor prototypes({M, d});
  for (std::size_t c = 0; c < M; ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      double anchor = (j == c) ? 1.0 : 0.0;
      prototypes.at(c, j) =
          anchor + spec.sigma_class * rng.normal() * inv_sqrt_d;
    }
  }
  normalize_rows_inplace(prototypes);

  // Fixed text bank: prototypes plus a small fixed perturbation.
  Tensor w_fixed({M, d});
  for (std::size_t c = 0; c < M; ++c)
    for (std::size_t j = 0; j < d; ++j)
      w_fixed.at(c, j) =
          prototypes.at(c, j) + 0.01 * rng.normal() * inv_sqrt_d;

  // Per-domain affine style; explicit vectors skip the seeded draw.
  Tensor style_scale({D, d});
  Tensor style_shift({D, d});
  for (std::size_t dom = 0; dom < D; ++dom) {
    for (std::size_t j = 0; j < d; ++j) {
      if (!spec.style_scale.empty()) {
        style_scale.at(dom, j) = spec.style_scale[dom][j];
      } else {
        style_scale.at(dom, j) =
            std::exp(spec.style_scale_spread * rng.normal());
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (!spec.style_shift.empty()) {
        style_shift.at(dom, j) = spec.style_shift[dom][j];
      } else {
        style_shift.at(dom, j) = spec.style_shift_spread * rng.normal();
      }
    }
  }

  auto header = [&](FeatureDataset& ds) {
    ds.d = spec.d;
    ds.N = spec.N;
    ds.M = spec.M;
    ds.D = spec.D;
    ds.w_fixed = w_fixed;
  };

  GeneratedData out;
  header(out.train);
  for (std::uint32_t dom = 0; dom < D; ++dom)
    for (std::uint32_t c = 0; c < M; ++c)
      for (std::uint32_t s = 0; s < spec.shots; ++s)
        out.train.samples.push_back(
            make_sample(prototypes, c, dom, style_scale, style_shift, spec,
                        rng));

  out.test_per_domain.resize(D);
  for (std::uint32_t dom = 0; dom < D; ++dom) {
    header(out.test_per_domain[dom]);
    for (std::uint32_t c = 0; c < M; ++c)
      for (std::uint32_t s = 0; s < spec.test_shots; ++s)
        out.test_per_domain[dom].samples.push_back(
            make_sample(prototypes, c, dom, style_scale, style_shift, spec,
                        rng));
  }

  out.prototypes = std::move(prototypes);
  out.train.validate();
  return out;
}

FeatureDataset merge(const std::vector<FeatureDataset>& parts) {
  check_contract(!parts.empty(), "merge: no datasets");
  FeatureDataset out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const FeatureDataset& p = parts[i];
    check_contract(p.d == out.d && p.N == out.N && p.M == out.M &&
                       p.D == out.D,
                   "merge: extent mismatch");
    out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
  }
  return out;
}

std::size_t gfea_file_size(std::uint32_t d, std::uint32_t n, std::uint32_t m,
                           std::uint64_t sample_count) {
  std::size_t header = 4 + 4 + 4 * 4 + 8;
  std::size_t bank = static_cast<std::size_t>(m) * d * 8;
  std::size_t record = 4 + 4 + static_cast<std::size_t>(d) * 8 +
                       static_cast<std::size_t>(n) * d * 8;
  return header + bank + sample_count * record;
}

void write_features(const std::string& path, const FeatureDataset& ds) {
  ds.validate();
  binio::Writer w(path);
  w.magic("GFEA");
  w.u32(1);
  w.u32(ds.d);
  w.u32(ds.N);
  w.u32(ds.M);
  w.u32(ds.D);
  w.u64(ds.samples.size());
  w.f64_array(ds.w_fixed.data(), ds.w_fixed.numel());
  for (const FeatureBundle& b : ds.samples) {
    w.u32(b.label);
    w.u32(b.domain);
    w.f64_array(b.f.data(), b.f.numel());
    w.f64_array(b.F.data(), b.F.numel());
  }
}

FeatureDataset read_features(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("GFEA");
  std::size_t at = r.offset();
  std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("unsupported GFEA version " + std::to_string(version),
                      at);
  FeatureDataset ds;
  ds.d = r.u32();
  ds.N = r.u32();
  ds.M = r.u32();
  at = r.offset();
  ds.D = r.u32();
  if (ds.d == 0 || ds.N == 0 || ds.M == 0 || ds.D == 0)
    throw FormatError("GFEA header has zero extent", at);
  std::uint64_t count = r.u64();
  ds.w_fixed = Tensor({ds.M, ds.d});
  r.f64_array(ds.w_fixed.data(), ds.w_fixed.numel());
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureBundle b;
    at = r.offset();
    b.label = r.u32();
    b.domain = r.u32();
    if (b.label >= ds.M || b.domain >= ds.D)
      throw FormatError("GFEA record " + std::to_string(i) +
                            " has out-of-range label or domain",
                        at);
    b.f = Tensor({ds.d});
    r.f64_array(b.f.data(), b.f.numel());
    b.F = Tensor({ds.N, ds.d});
    r.f64_array(b.F.data(), b.F.numel());
    ds.samples.push_back(std::move(b));
  }
  if (!r.at_eof())
    throw FormatError("trailing bytes after last GFEA record", r.offset());
  return ds;
}

double centroid_gap(const std::vector<const Tensor*>& group_a,
                    const std::vector<const Tensor*>& group_b) {
  if (group_a.empty() || group_b.empty())
    throw DegenerateInputError("centroid_gap: empty group");
  std::size_t d = group_a.front()->numel();
  auto mean_of = [d](const std::vector<const Tensor*>& group) {
    Tensor m({d});
    for (const Tensor* t : group) {
      check_contract(t->numel() == d, "centroid_gap: length mismatch");
      for (std::size_t j = 0; j < d; ++j) m[j] += (*t)[j];
    }
    for (std::size_t j = 0; j < d; ++j)
      m[j] /= static_cast<double>(group.size());
    return m;
  };
  Tensor ma = mean_of(group_a);
  Tensor mb = mean_of(group_b);
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double diff = ma[j] - mb[j];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

double centroid_gap_first_order(const FeatureDataset& ds, std::uint32_t label,
                                std::uint32_t domain_a,
                                std::uint32_t domain_b) {
  std::vector<const Tensor*> ga, gb;
  for (const FeatureBundle& b : ds.samples) {
    if (b.label != label) continue;
    if (b.domain == domain_a) ga.push_back(&b.f);
    if (b.domain == domain_b) gb.push_back(&b.f);
  }
  return centroid_gap(ga, gb);
}

}  // namespace gapl
