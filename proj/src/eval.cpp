#include "gapl/eval.hpp"

#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binio.hpp"
#include "gapl/stream_contextual.hpp"
#include "gapl/stream_global.hpp"

namespace gapl {

using nlohmann::json;

double harmonic_mean(double base, double novel) {
  check_contract(base >= 0.0 && base <= 100.0 && novel >= 0.0 &&
                     novel <= 100.0,
                 "harmonic_mean: accuracies must be in [0,100]");
  if (base == 0.0 && novel == 0.0)
    throw DegenerateInputError("harmonic_mean: both accuracies are zero");
  return 2.0 * base * novel / (base + novel);
}

namespace {

struct SampleInference {
  bool hit_global = false, hit_gram = false, hit_ctx = false,
       hit_fused = false;
  Tensor gamma;       // [d] when gram active
  Tensor a_style_gt;  // [d] anchor row of the ground-truth class
};

TrainConfig effective_config(const Checkpoint& ckpt, const EvalOptions& opt) {
  TrainConfig cfg = ckpt.cfg;
  if (opt.alpha_override) cfg.alpha = *opt.alpha_override;
  if (opt.streams_override) cfg.streams = *opt.streams_override;
  cfg.validate();
  return cfg;
}

SampleInference infer_sample(const ModelParams& params, const TrainConfig& cfg,
                             const Tensor& w_fixed, const FeatureBundle& x,
                             const std::vector<std::uint8_t>& mask,
                             const std::vector<double>& alpha_per_class,
                             bool want_anchor) {
  Tape t;
  ParamLeaves pl = ParamLeaves::put(t, params, false);
  ForwardOptions opt;
  opt.mode = TextMode::kInfer;
  opt.class_mask = mask;
  opt.alpha_per_class = alpha_per_class;
  SampleGraph g = build_forward(t, pl, cfg, w_fixed, x, opt);

  SampleInference out;
  auto hit = [&](Value p) {
    return argmax_masked(t.value(p), mask) == x.label;
  };
  if (cfg.streams.global) out.hit_global = hit(g.p_global);
  if (cfg.streams.gram) out.hit_gram = hit(g.p_gram);
  if (cfg.streams.ctx) out.hit_ctx = hit(g.p_ctx);
  out.hit_fused = hit(g.p_fused);
  if (cfg.streams.gram && want_anchor) {
    out.gamma = t.value(g.gamma);
    const Tensor& w = t.value(g.w_text);
    std::size_t d = w.cols();
    out.a_style_gt = Tensor({d});
    for (std::size_t j = 0; j < d; ++j)
      out.a_style_gt[j] =
          w.at(x.label, j) + w.at(x.label, j) * out.gamma[j];
  }
  return out;
}

double percent(std::size_t hits, std::size_t total) {
  return total == 0 ? -1.0 : 100.0 * double(hits) / double(total);
}

}  // namespace

EvalReport evaluate(const FeatureDataset& data, const Checkpoint& ckpt,
                    const EvalOptions& opt) {
  auto t0 = std::chrono::steady_clock::now();
  data.validate();
  if (ckpt.params.d != data.d || ckpt.params.M != data.M)
    throw FormatError("checkpoint extents (d=" +
                          std::to_string(ckpt.params.d) +
                          ", M=" + std::to_string(ckpt.params.M) +
                          ") do not match dataset (d=" +
                          std::to_string(data.d) +
                          ", M=" + std::to_string(data.M) + ")",
                      0);
  TrainConfig cfg = effective_config(ckpt, opt);

  EvalReport report;
  report.has_split = !opt.base_classes.empty();
  std::vector<std::uint8_t> base_mask, novel_mask;
  std::vector<double> split_alpha;
  if (report.has_split) {
    base_mask.assign(data.M, 0);
    for (std::uint32_t c : opt.base_classes) {
      check_contract(c < data.M, "evaluate: base class id out of range");
      base_mask[c] = 1;
    }
    novel_mask.assign(data.M, 0);
    for (std::size_t c = 0; c < data.M; ++c) novel_mask[c] = !base_mask[c];
    split_alpha.assign(data.M, cfg.alpha);
    for (std::size_t c = 0; c < data.M; ++c)
      if (!base_mask[c]) split_alpha[c] = 0.0;  // no learned vector exists
  }

  bool want_anchor = opt.compute_gaps && cfg.streams.gram && data.D >= 2;
  std::size_t S = data.samples.size();
  std::vector<SampleInference> results(S);
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(S); ++i) {
    try {
      std::size_t u = static_cast<std::size_t>(i);
      const FeatureBundle& x = data.samples[u];
      static const std::vector<std::uint8_t> kEmpty;
      const std::vector<std::uint8_t>* mask = &kEmpty;
      if (report.has_split)
        mask = base_mask[x.label] ? &base_mask : &novel_mask;
      results[u] = infer_sample(ckpt.params, cfg, data.w_fixed, x, *mask,
                                split_alpha, want_anchor);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::size_t hits_g = 0, hits_s = 0, hits_c = 0, hits_f = 0;
  std::vector<std::size_t> dom_hits(data.D, 0), dom_total(data.D, 0);
  std::size_t base_hits = 0, base_total = 0, novel_hits = 0, novel_total = 0;
  for (std::size_t u = 0; u < S; ++u) {
    const SampleInference& r = results[u];
    const FeatureBundle& x = data.samples[u];
    hits_g += r.hit_global;
    hits_s += r.hit_gram;
    hits_c += r.hit_ctx;
    hits_f += r.hit_fused;
    dom_hits[x.domain] += r.hit_fused;
    dom_total[x.domain] += 1;
    if (report.has_split) {
      if (base_mask[x.label]) {
        base_hits += r.hit_fused;
        base_total += 1;
      } else {
        novel_hits += r.hit_fused;
        novel_total += 1;
      }
    }
  }
  if (cfg.streams.global) report.acc_global = percent(hits_g, S);
  if (cfg.streams.gram) report.acc_gram = percent(hits_s, S);
  if (cfg.streams.ctx) report.acc_ctx = percent(hits_c, S);
  report.acc_fused = percent(hits_f, S);
  report.per_domain_acc.resize(data.D);
  for (std::size_t dom = 0; dom < data.D; ++dom)
    report.per_domain_acc[dom] = percent(dom_hits[dom], dom_total[dom]);
  if (report.has_split) {
    report.base_acc = percent(base_hits, base_total);
    report.novel_acc = percent(novel_hits, novel_total);
    report.hm = harmonic_mean(std::max(report.base_acc, 0.0),
                              std::max(report.novel_acc, 0.0));
  }

  if (want_anchor) {
    for (std::uint32_t c = 0; c < data.M; ++c) {
      std::vector<const Tensor*> f0, f1, a0, a1;
      for (std::size_t u = 0; u < S; ++u) {
        const FeatureBundle& x = data.samples[u];
        if (x.label != c) continue;
        if (x.domain == 0) {
          f0.push_back(&x.f);
          a0.push_back(&results[u].a_style_gt);
        } else if (x.domain == 1) {
          f1.push_back(&x.f);
          a1.push_back(&results[u].a_style_gt);
        }
      }
      if (f0.empty() || f1.empty()) continue;
      ClassGap gap;
      gap.label = c;
      gap.first_order = centroid_gap(f0, f1);
      gap.anchored = centroid_gap(a0, a1);
      report.gaps.push_back(gap);
    }
  }

  report.config_json = cfg.to_json_text();
  report.config_hash = cfg.hash();
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

std::string report_json(const EvalReport& r) {
  json rep;
  json domains = json::object();
  for (std::size_t dom = 0; dom < r.per_domain_acc.size(); ++dom) {
    if (r.per_domain_acc[dom] >= 0.0)
      domains[std::to_string(dom)] = r.per_domain_acc[dom];
  }
  rep["per_domain_acc"] = domains;
  if (r.acc_global >= 0.0) rep["acc_global"] = r.acc_global;
  if (r.acc_gram >= 0.0) rep["acc_gram"] = r.acc_gram;
  if (r.acc_ctx >= 0.0) rep["acc_ctx"] = r.acc_ctx;
  rep["acc_fused"] = r.acc_fused;
  if (r.has_split) {
    rep["base_acc"] = r.base_acc;
    rep["novel_acc"] = r.novel_acc;
    rep["hm"] = r.hm;
  }
  json gaps = json::array();
  for (const ClassGap& g : r.gaps) {
    gaps.push_back({{"class", g.label},
                    {"first_order", g.first_order},
                    {"anchored", g.anchored}});
  }
  rep["centroid_gaps"] = gaps;
  rep["config"] = json::parse(r.config_json);
  rep["config_hash"] = r.config_hash;
  json out;
  out["report"] = rep;
  out["runtime_seconds"] = r.runtime_seconds;
  return out.dump(2);
}

std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  char line[128];
  out << "stream          top-1\n";
  auto row = [&](const char* name, double acc) {
    if (acc < 0.0) return;
    std::snprintf(line, sizeof(line), "%-12s %8.2f\n", name, acc);
    out << line;
  };
  row("global", r.acc_global);
  row("gram", r.acc_gram);
  row("contextual", r.acc_ctx);
  row("fused", r.acc_fused);
  out << "per-domain fused accuracy:\n";
  for (std::size_t dom = 0; dom < r.per_domain_acc.size(); ++dom) {
    if (r.per_domain_acc[dom] < 0.0) continue;
    std::snprintf(line, sizeof(line), "  domain %-4zu %8.2f\n", dom,
                  r.per_domain_acc[dom]);
    out << line;
  }
  if (r.has_split) {
    std::snprintf(line, sizeof(line),
                  "base %.2f  novel %.2f  harmonic mean %.2f\n", r.base_acc,
                  r.novel_acc, r.hm);
    out << line;
  }
  if (!r.gaps.empty()) {
    out << "centroid gaps (domain 0 vs 1):\n";
    out << "  class   first-order   anchored\n";
    for (const ClassGap& g : r.gaps) {
      std::snprintf(line, sizeof(line), "  %-5u %12.4f %10.4f\n", g.label,
                    g.first_order, g.anchored);
      out << line;
    }
  }
  std::snprintf(line, sizeof(line), "config hash %016llx\n",
                static_cast<unsigned long long>(r.config_hash));
  out << line;
  return out.str();
}

// ---- anchor dump -----------------------------------------------------------

namespace {

void write_named_tensor(binio::Writer& w, const std::string& name,
                        const Tensor& t) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.text(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  w.f64_array(t.data(), t.numel());
}

Tensor read_named_tensor(binio::Reader& r, std::string& name) {
  name = r.text(r.u16());
  std::uint8_t rank = r.u8();
  std::vector<std::size_t> shape(rank);
  std::size_t at = r.offset();
  for (std::uint8_t i = 0; i < rank; ++i) {
    shape[i] = r.u32();
    if (shape[i] == 0)
      throw FormatError("anchor tensor \"" + name + "\" has zero extent", at);
  }
  Tensor t(shape);
  r.f64_array(t.data(), t.numel());
  return t;
}

}  // namespace

void dump_anchors(const std::string& path, const FeatureDataset& data,
                  const Checkpoint& ckpt,
                  std::optional<double> alpha_override) {
  data.validate();
  if (ckpt.params.d != data.d || ckpt.params.M != data.M)
    throw FormatError("checkpoint extents do not match dataset", 0);
  TrainConfig cfg = ckpt.cfg;
  if (alpha_override) cfg.alpha = *alpha_override;
  check_contract(cfg.streams.gram,
                 "dump_anchors: gram stream must be active");

  std::size_t S = data.samples.size(), d = data.d;
  AnchorDump dump;
  dump.f = Tensor({S, d});
  dump.gamma = Tensor({S, d});
  dump.a_style = Tensor({S, d});
  dump.label = Tensor({S});
  dump.domain = Tensor({S});

  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(S); ++i) {
    try {
      std::size_t u = static_cast<std::size_t>(i);
      const FeatureBundle& x = data.samples[u];
      SampleInference r =
          infer_sample(ckpt.params, cfg, data.w_fixed, x, {}, {}, true);
      for (std::size_t j = 0; j < d; ++j) {
        dump.f.at(u, j) = x.f[j];
        dump.gamma.at(u, j) = r.gamma[j];
        dump.a_style.at(u, j) = r.a_style_gt[j];
      }
      dump.label[u] = double(x.label);
      dump.domain[u] = double(x.domain);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Contextual anchors are sample-independent given the fused text bank.
  ClassTextBank bank{data.w_fixed, ckpt.params.w_learn, cfg.alpha};
  Tensor w_text = fuse_text(bank, TextMode::kInfer);
  dump.a_ctx = Tensor({std::size_t(cfg.K), std::size_t(data.M), d});
  for (std::uint32_t k = 1; k <= cfg.K; ++k) {
    Tensor anchors = contextual_anchor(ckpt.params, w_text, k);
    for (std::size_t c = 0; c < data.M; ++c)
      for (std::size_t j = 0; j < d; ++j)
        dump.a_ctx[((k - 1) * data.M + c) * d + j] = anchors.at(c, j);
  }

  binio::Writer w(path);
  w.magic("GANC");
  w.u32(1);
  w.u32(6);
  write_named_tensor(w, "f", dump.f);
  write_named_tensor(w, "gamma", dump.gamma);
  write_named_tensor(w, "a_style", dump.a_style);
  write_named_tensor(w, "label", dump.label);
  write_named_tensor(w, "domain", dump.domain);
  write_named_tensor(w, "a_ctx", dump.a_ctx);
}

AnchorDump read_anchors(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("GANC");
  std::size_t at = r.offset();
  std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("unsupported GANC version " + std::to_string(version),
                      at);
  std::uint32_t count = r.u32();
  AnchorDump dump;
  bool have[6] = {false, false, false, false, false, false};
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    at = r.offset();
    Tensor t = read_named_tensor(r, name);
    if (name == "f") {
      dump.f = std::move(t);
      have[0] = true;
    } else if (name == "gamma") {
      dump.gamma = std::move(t);
      have[1] = true;
    } else if (name == "a_style") {
      dump.a_style = std::move(t);
      have[2] = true;
    } else if (name == "label") {
      dump.label = std::move(t);
      have[3] = true;
    } else if (name == "domain") {
      dump.domain = std::move(t);
      have[4] = true;
    } else if (name == "a_ctx") {
      dump.a_ctx = std::move(t);
      have[5] = true;
    } else {
      throw FormatError("unexpected anchor tensor \"" + name + "\"", at);
    }
  }
  for (bool h : have)
    if (!h) throw FormatError("anchor dump is missing a tensor", r.offset());
  if (!r.at_eof())
    throw FormatError("trailing bytes after last anchor tensor", r.offset());
  return dump;
}

double centroid_gap_anchored(const AnchorDump& dump, std::uint32_t label,
                             std::uint32_t domain_a, std::uint32_t domain_b) {
  std::size_t S = dump.label.numel(), d = dump.a_style.cols();
  std::vector<Tensor> rows_a, rows_b;
  for (std::size_t u = 0; u < S; ++u) {
    if (dump.label[u] != double(label)) continue;
    Tensor row({d});
    for (std::size_t j = 0; j < d; ++j) row[j] = dump.a_style.at(u, j);
    if (dump.domain[u] == double(domain_a)) rows_a.push_back(std::move(row));
    else if (dump.domain[u] == double(domain_b))
      rows_b.push_back(std::move(row));
  }
  std::vector<const Tensor*> ga, gb;
  for (const Tensor& t : rows_a) ga.push_back(&t);
  for (const Tensor& t : rows_b) gb.push_back(&t);
  return centroid_gap(ga, gb);
}

// ---- ablation suites ---------------------------------------------------------

AblationSuite ablation_suite_from_name(const std::string& name) {
  if (name == "streams") return AblationSuite::kStreams;
  if (name == "alpha") return AblationSuite::kAlpha;
  if (name == "descriptor") return AblationSuite::kDescriptor;
  throw ContractError("unknown ablation suite: " + name);
}

namespace {

std::string acc_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n') c = ';';
  return s;
}

struct RowResult {
  std::vector<std::string> cells;  // train_acc, per-domain, avg
  std::string hash;
};

RowResult run_point(const TrainConfig& cfg, const FeatureDataset& train_data,
                    const FeatureDataset& test_data) {
  RowResult row;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  row.hash = hash;
  try {
    TrainResult tr = train(train_data, cfg);
    EvalReport rep = evaluate(test_data, tr.checkpoint, {});
    row.cells.push_back(acc_cell(tr.final_log.acc_fused));
    double sum = 0.0;
    std::size_t n = 0;
    for (double acc : rep.per_domain_acc) {
      row.cells.push_back(acc >= 0.0 ? acc_cell(acc) : "-");
      if (acc >= 0.0) {
        sum += acc;
        ++n;
      }
    }
    row.cells.push_back(acc_cell(n ? sum / double(n) : 0.0));
  } catch (const ResourceGuardError&) {
    row.cells.assign(test_data.D + 2, "RESOURCE_GUARD");
  } catch (const std::exception& e) {
    row.cells.assign(test_data.D + 2,
                     sanitize_cell(std::string("ERROR(") + e.what() + ")"));
  }
  return row;
}

std::string header_cells(const FeatureDataset& test_data) {
  std::string h = "train_acc";
  for (std::uint32_t dom = 0; dom < test_data.D; ++dom)
    h += ",test_d" + std::to_string(dom);
  h += ",test_avg,config_hash";
  return h;
}

}  // namespace

std::string run_ablation(const AblationSpec& spec,
                         const FeatureDataset& train_data,
                         const FeatureDataset& test_data,
                         const TrainConfig& base_cfg) {
  std::ostringstream csv;
  switch (spec.suite) {
    case AblationSuite::kStreams: {
      csv << "G,S,C," << header_cells(test_data) << "\n";
      const StreamSet combos[4] = {{true, false, false},
                                   {true, true, false},
                                   {true, false, true},
                                   {true, true, true}};
      for (const StreamSet& streams : combos) {
        TrainConfig cfg = base_cfg;
        cfg.streams = streams;
        RowResult row = run_point(cfg, train_data, test_data);
        csv << (streams.global ? "1" : "0") << ','
            << (streams.gram ? "1" : "0") << ',' << (streams.ctx ? "1" : "0");
        for (const std::string& cell : row.cells) csv << ',' << cell;
        csv << ',' << row.hash << "\n";
      }
      break;
    }
    case AblationSuite::kAlpha: {
      check_contract(!spec.alpha_grid.empty(), "ablation: empty alpha grid");
      for (double a : spec.alpha_grid)
        check_contract(a >= 0.0 && a <= 1.0,
                       "ablation: alpha grid must lie in [0,1]");
      csv << "alpha," << header_cells(test_data) << "\n";
      for (double a : spec.alpha_grid) {
        TrainConfig cfg = base_cfg;
        cfg.alpha = a;
        RowResult row = run_point(cfg, train_data, test_data);
        char acell[32];
        std::snprintf(acell, sizeof(acell), "%.1f", a);
        csv << acell;
        for (const std::string& cell : row.cells) csv << ',' << cell;
        csv << ',' << row.hash << "\n";
      }
      break;
    }
    case AblationSuite::kDescriptor: {
      csv << "descriptor," << header_cells(test_data) << "\n";
      const DescriptorMode modes[3] = {DescriptorMode::kDiag,
                                       DescriptorMode::kDiagVar,
                                       DescriptorMode::kFull};
      for (DescriptorMode mode : modes) {
        TrainConfig cfg = base_cfg;
        cfg.descriptor_mode = mode;
        RowResult row = run_point(cfg, train_data, test_data);
        csv << descriptor_mode_name(mode);
        for (const std::string& cell : row.cells) csv << ',' << cell;
        csv << ',' << row.hash << "\n";
      }
      break;
    }
  }
  return csv.str();
}

}  // namespace gapl
