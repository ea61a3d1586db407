#include "gapl/model.hpp"

#include <cmath>

#include "gapl/rng.hpp"

namespace gapl {

namespace {

Tensor gaussian(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
  return t;
}

MlpParams make_mlp(std::size_t in, std::size_t hidden, std::size_t out,
                   Rng& rng) {
  MlpParams mlp;
  mlp.w1 = gaussian({hidden, in}, 1.0 / std::sqrt(double(in)), rng);
  mlp.b1 = Tensor({hidden});
  mlp.w2 = Tensor({out, hidden});  // zero: identity-start residual
  mlp.b2 = Tensor({out});
  return mlp;
}

}  // namespace

ModelParams ModelParams::init(const TrainConfig& cfg, const Tensor& w_fixed) {
  cfg.validate();
  ModelParams p;
  p.M = static_cast<std::uint32_t>(w_fixed.rows());
  p.d = static_cast<std::uint32_t>(w_fixed.cols());
  std::uint32_t d = p.d;

  if (cfg.descriptor_mode == DescriptorMode::kFull && d > cfg.full_gram_limit)
    throw ResourceGuardError(
        "full Gram descriptor requires d <= " +
        std::to_string(cfg.full_gram_limit) + ", got d = " +
        std::to_string(d));

  Rng rng(cfg.seed);
  p.w_learn = w_fixed;
  for (std::size_t i = 0; i < p.w_learn.numel(); ++i)
    p.w_learn[i] += 0.02 * rng.normal();

  p.gate = make_mlp(cfg.gate_input_extent(d), cfg.gate_hidden(d), d, rng);

  p.local_signals.reserve(cfg.K);
  for (std::uint32_t k = 0; k < cfg.K; ++k)
    p.local_signals.push_back(gaussian({cfg.P, d}, 0.02, rng));

  double proj_std = 1.0 / std::sqrt(double(d));
  p.attn_wq = gaussian({d, d}, proj_std, rng);
  p.attn_wk = gaussian({d, d}, proj_std, rng);
  p.attn_wv = gaussian({d, d}, proj_std, rng);

  p.ctx_net = make_mlp(d, cfg.ctx_hidden(d), d, rng);
  p.fusion_net = make_mlp(2 * static_cast<std::size_t>(d), cfg.h_b, 3, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("w_learn", &w_learn);
  out.emplace_back("gate.w1", &gate.w1);
  out.emplace_back("gate.b1", &gate.b1);
  out.emplace_back("gate.w2", &gate.w2);
  out.emplace_back("gate.b2", &gate.b2);
  for (std::size_t k = 0; k < local_signals.size(); ++k)
    out.emplace_back("local." + std::to_string(k), &local_signals[k]);
  out.emplace_back("attn.wq", &attn_wq);
  out.emplace_back("attn.wk", &attn_wk);
  out.emplace_back("attn.wv", &attn_wv);
  out.emplace_back("ctx.w1", &ctx_net.w1);
  out.emplace_back("ctx.b1", &ctx_net.b1);
  out.emplace_back("ctx.w2", &ctx_net.w2);
  out.emplace_back("ctx.b2", &ctx_net.b2);
  out.emplace_back("fusion.w1", &fusion_net.w1);
  out.emplace_back("fusion.b1", &fusion_net.b1);
  out.emplace_back("fusion.w2", &fusion_net.w2);
  out.emplace_back("fusion.b2", &fusion_net.b2);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  auto mutable_named = const_cast<ModelParams*>(this)->named();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mutable_named.size());
  for (auto& [name, t] : mutable_named) out.emplace_back(name, t);
  return out;
}

void ModelParams::jitter(double stddev, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : named()) {
    (void)name;
    for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] += stddev * rng.normal();
  }
}

}  // namespace gapl
