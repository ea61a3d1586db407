#include "gapl/config.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace gapl {

using nlohmann::json;

std::string descriptor_mode_name(DescriptorMode mode) {
  switch (mode) {
    case DescriptorMode::kDiag:
      return "diag";
    case DescriptorMode::kDiagVar:
      return "diag_var";
    case DescriptorMode::kFull:
      return "full";
  }
  throw ContractError("descriptor_mode_name: unknown mode");
}

DescriptorMode descriptor_mode_from_name(const std::string& name) {
  if (name == "diag") return DescriptorMode::kDiag;
  if (name == "diag_var") return DescriptorMode::kDiagVar;
  if (name == "full") return DescriptorMode::kFull;
  throw ContractError("unknown descriptor mode: " + name);
}

StreamSet StreamSet::parse(const std::string& text) {
  StreamSet set{false, false, false};
  for (char ch : text) {
    switch (ch) {
      case 'g':
        set.global = true;
        break;
      case 's':
        set.gram = true;
        break;
      case 'c':
        set.ctx = true;
        break;
      case ',':
      case ' ':
        break;
      default:
        throw ContractError(std::string("StreamSet: unknown stream '") + ch +
                            "' (expected g, s, c)");
    }
  }
  check_contract(set.count() >= 1, "StreamSet: at least one active stream");
  return set;
}

std::string StreamSet::to_string() const {
  std::string out;
  auto append = [&](char c) {
    if (!out.empty()) out += ',';
    out += c;
  };
  if (global) append('g');
  if (gram) append('s');
  if (ctx) append('c');
  return out;
}

void TrainConfig::validate() const {
  check_contract(alpha >= 0.0 && alpha <= 1.0, "TrainConfig: alpha in [0,1]");
  check_contract(tau > 0.0, "TrainConfig: tau must be positive");
  check_contract(epsilon > 0.0, "TrainConfig: epsilon must be positive");
  check_contract(K >= 1 && P >= 1, "TrainConfig: K and P must be >= 1");
  check_contract(T_bw > 0.0 && T_global > 0.0 && T_gram > 0.0 && T_ctx > 0.0,
                 "TrainConfig: temperatures must be positive");
  check_contract(lambda_fused >= 0.0 && lambda_txt >= 0.0 && lambda_img >= 0.0,
                 "TrainConfig: loss weights must be nonnegative");
  check_contract(learning_rate >= 0.0,
                 "TrainConfig: learning rate must be nonnegative");
  check_contract(momentum >= 0.0 && momentum < 1.0,
                 "TrainConfig: momentum in [0,1)");
  check_contract(batch_size >= 1, "TrainConfig: batch size >= 1");
  check_contract(streams.count() >= 1,
                 "TrainConfig: at least one active stream");
}

std::uint32_t TrainConfig::gate_hidden(std::uint32_t d) const {
  return h_s != 0 ? h_s : std::max<std::uint32_t>(d / 4, 8);
}

std::uint32_t TrainConfig::ctx_hidden(std::uint32_t d) const {
  return h_c != 0 ? h_c : std::max<std::uint32_t>(d / 4, 8);
}

std::size_t TrainConfig::gate_input_extent(std::uint32_t d) const {
  switch (descriptor_mode) {
    case DescriptorMode::kDiag:
      return d;
    case DescriptorMode::kDiagVar:
      return 2 * static_cast<std::size_t>(d);
    case DescriptorMode::kFull:
      return static_cast<std::size_t>(d) * d;
  }
  throw ContractError("gate_input_extent: unknown mode");
}

std::string TrainConfig::to_json_text() const {
  json j;
  j["alpha"] = alpha;
  j["tau"] = tau;
  j["epsilon"] = epsilon;
  j["K"] = K;
  j["P"] = P;
  j["descriptor_mode"] = descriptor_mode_name(descriptor_mode);
  j["h_s"] = h_s;
  j["h_c"] = h_c;
  j["h_b"] = h_b;
  j["T_bw"] = T_bw;
  j["T_global"] = T_global;
  j["T_gram"] = T_gram;
  j["T_ctx"] = T_ctx;
  j["lambda_fused"] = lambda_fused;
  j["lambda_txt"] = lambda_txt;
  j["lambda_img"] = lambda_img;
  j["learning_rate"] = learning_rate;
  j["momentum"] = momentum;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["streams"] = streams.to_string();
  j["full_gram_limit"] = full_gram_limit;
  return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.tau = j.value("tau", c.tau);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.K = j.value("K", c.K);
  c.P = j.value("P", c.P);
  if (j.contains("descriptor_mode"))
    c.descriptor_mode =
        descriptor_mode_from_name(j["descriptor_mode"].get<std::string>());
  c.h_s = j.value("h_s", c.h_s);
  c.h_c = j.value("h_c", c.h_c);
  c.h_b = j.value("h_b", c.h_b);
  c.T_bw = j.value("T_bw", c.T_bw);
  c.T_global = j.value("T_global", c.T_global);
  c.T_gram = j.value("T_gram", c.T_gram);
  c.T_ctx = j.value("T_ctx", c.T_ctx);
  c.lambda_fused = j.value("lambda_fused", c.lambda_fused);
  c.lambda_txt = j.value("lambda_txt", c.lambda_txt);
  c.lambda_img = j.value("lambda_img", c.lambda_img);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("streams"))
    c.streams = StreamSet::parse(j["streams"].get<std::string>());
  c.full_gram_limit = j.value("full_gram_limit", c.full_gram_limit);
  c.validate();
  return c;
}

std::uint64_t TrainConfig::hash() const {
  std::string text = to_json_text();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace gapl
