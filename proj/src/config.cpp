#include "patchlm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace patchlm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real_plain(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

// Accepts "0.5", "1e-3" and fractions such as "2/3".
double to_real(const std::string& key, const std::string& v) {
  const auto slash = v.find('/');
  if (slash == std::string::npos) return to_real_plain(key, v);
  const double den = to_real_plain(key, trim(v.substr(slash + 1)));
  if (den == 0) throw ConfigError(key + ": zero denominator");
  return to_real_plain(key, trim(v.substr(0, slash))) / den;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <class F>
Setter uint_field(F field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = to_uint(k, v); };
}
template <class F>
Setter real_field(F field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = to_real(k, v); };
}
template <class F>
Setter bool_field(F field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = to_bool(k, v); };
}

#define PLM_REF(expr) [](RunConfig& c) -> auto& { return expr; }

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.vocab_size", uint_field(PLM_REF(c.model.vocab_size))},
      {"model.hidden_size", uint_field(PLM_REF(c.model.hidden_size))},
      {"model.intermediate_size", uint_field(PLM_REF(c.model.intermediate_size))},
      {"model.n_layers", uint_field(PLM_REF(c.model.n_layers))},
      {"model.n_heads", uint_field(PLM_REF(c.model.n_heads))},
      {"model.max_context", uint_field(PLM_REF(c.model.max_context))},
      {"model.rope_base", real_field(PLM_REF(c.model.rope_base))},
      {"model.rms_eps", real_field(PLM_REF(c.model.rms_eps))},

      {"patch.K", uint_field(PLM_REF(c.patch.patch_size))},
      {"patch.lambda", real_field(PLM_REF(c.patch.lambda))},
      {"patch.context", uint_field(PLM_REF(c.patch.context_tokens))},
      {"patch.context_mode",
       [](RunConfig& c, const std::string&, const std::string& v) { c.patch.context_mode = parse_context_mode(v); }},
      {"patch.strategy",
       [](RunConfig& c, const std::string&, const std::string& v) { c.patch.strategy = parse_patch_strategy(v); }},
      {"patch.input_proj", bool_field(PLM_REF(c.patch.input_proj))},
      {"patch.output_proj", bool_field(PLM_REF(c.patch.output_proj))},

      {"train.steps", uint_field(PLM_REF(c.train.steps))},
      {"train.epochs", real_field(PLM_REF(c.train.epochs))},
      {"train.tokens_per_batch", uint_field(PLM_REF(c.train.tokens_per_batch))},
      {"train.lr", real_field(PLM_REF(c.train.lr))},
      {"train.warmup", uint_field(PLM_REF(c.train.warmup))},
      {"train.token_warmup", uint_field(PLM_REF(c.train.token_warmup))},
      {"train.floor_fraction", real_field(PLM_REF(c.train.floor_fraction))},
      {"train.weight_decay", real_field(PLM_REF(c.train.weight_decay))},
      {"train.clip", real_field(PLM_REF(c.train.clip))},
      {"train.beta1", real_field(PLM_REF(c.train.beta1))},
      {"train.beta2", real_field(PLM_REF(c.train.beta2))},
      {"train.eps", real_field(PLM_REF(c.train.eps))},
      {"train.seed", uint_field(PLM_REF(c.train.seed))},
      {"train.log_interval", uint_field(PLM_REF(c.train.log_interval))},
      {"train.eval_interval", uint_field(PLM_REF(c.train.eval_interval))},
      {"train.eval_blocks", uint_field(PLM_REF(c.train.eval_blocks))},
      {"train.checkpoint_interval", uint_field(PLM_REF(c.train.checkpoint_interval))},
      {"train.log_wall_clock", bool_field(PLM_REF(c.train.log_wall_clock))},

      {"data.path", [](RunConfig& c, const std::string&, const std::string& v) { c.data.path = v; }},
      {"data.kind",
       [](RunConfig& c, const std::string&, const std::string& v) { c.data.kind = parse_tokenizer_kind(v); }},
      {"data.eval_tokens", uint_field(PLM_REF(c.data.eval_tokens))},
      {"data.synthetic_bytes", uint_field(PLM_REF(c.data.synthetic_bytes))},
      {"data.synthetic_seed", uint_field(PLM_REF(c.data.synthetic_seed))},
  };
  return table;
}

#undef PLM_REF

}  // namespace

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(config, key, value);
}

void RunConfig::validate() const {
  model.validate();
  patch.validate();
  const auto& t = train;
  if (t.steps == 0 && !(t.epochs > 0)) throw ConfigError("set train.steps or train.epochs");
  if (t.steps != 0 && t.epochs > 0) throw ConfigError("train.steps and train.epochs are exclusive");
  if (!(t.lr > 0)) throw ConfigError("train.lr must be positive");
  if (!(t.floor_fraction >= 0 && t.floor_fraction <= 1)) throw ConfigError("train.floor_fraction must lie in [0, 1]");
  if (!(t.clip > 0)) throw ConfigError("train.clip must be positive");
  if (!(t.beta1 >= 0 && t.beta1 < 1 && t.beta2 >= 0 && t.beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (t.log_interval == 0) throw ConfigError("train.log_interval must be at least 1");
  const std::size_t T = patch.context_tokens;
  if (T > model.max_context) {
    throw ConfigError("context " + std::to_string(T) + " exceeds model.max_context " +
                      std::to_string(model.max_context));
  }
  if (t.tokens_per_batch % T != 0) {
    throw ConfigError("train.tokens_per_batch must be a multiple of the context " + std::to_string(T));
  }
  if (patch.lambda > 0 && t.tokens_per_batch % patch.block_length() != 0) {
    throw ConfigError("train.tokens_per_batch must be a multiple of the patch-stage block length " +
                      std::to_string(patch.block_length()));
  }
  if (patch.lambda > 0 && patch.strategy == PatchStrategy::mixup && patch_rows() % patch.patch_size != 0) {
    throw ConfigError("mixup needs the patch-stage batch rows to be a multiple of K");
  }
  if (data.kind == TokenizerKind::byte && model.vocab_size != 256) {
    throw ConfigError("byte tokenizer requires model.vocab_size = 256");
  }
  if (data.path.empty() && data.synthetic_bytes == 0) {
    throw ConfigError("set data.path or data.synthetic_bytes");
  }
}

std::size_t RunConfig::token_rows() const { return train.tokens_per_batch / patch.context_tokens; }
std::size_t RunConfig::patch_rows() const { return train.tokens_per_batch / patch.block_length(); }

RunConfig parse_config(std::istream& in) {
  RunConfig config;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'section.key = value'");
    }
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

}  // namespace patchlm
