#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "w2s/error.hpp"
#include "w2s/io.hpp"

namespace w2s {

namespace detail {

json to_json(const ModelConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["max_seq_len"] = c.max_seq_len;
  j["mlp_ratio"] = c.mlp_ratio;
  j["adapter"] = {{"enabled", c.adapter.enabled}, {"rank", c.adapter.rank}, {"alpha", c.adapter.alpha}};
  j["pooling"] = c.pooling == HeadPooling::last_token ? "last_token" : "response_mean";
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(j, {"vocab_size", "d_model", "n_layers", "n_heads", "max_seq_len", "mlp_ratio", "adapter", "pooling", "seed"},
                 where);
  ModelConfig c;
  read_field(j, "vocab_size", c.vocab_size, where);
  read_field(j, "d_model", c.d_model, where);
  read_field(j, "n_layers", c.n_layers, where);
  read_field(j, "n_heads", c.n_heads, where);
  read_field(j, "max_seq_len", c.max_seq_len, where);
  read_field(j, "mlp_ratio", c.mlp_ratio, where);
  read_field(j, "seed", c.seed, where);
  if (j.contains("adapter")) {
    const json& a = j["adapter"];
    if (!a.is_object()) throw ConfigError(where + ".adapter: expected an object");
    reject_unknown(a, {"enabled", "rank", "alpha"}, where + ".adapter");
    read_field(a, "enabled", c.adapter.enabled, where + ".adapter");
    read_field(a, "rank", c.adapter.rank, where + ".adapter");
    read_field(a, "alpha", c.adapter.alpha, where + ".adapter");
  }
  if (j.contains("pooling")) {
    std::string p;
    read_field(j, "pooling", p, where);
    if (p == "last_token") {
      c.pooling = HeadPooling::last_token;
    } else if (p == "response_mean") {
      c.pooling = HeadPooling::response_mean;
    } else {
      throw ConfigError(where + ".pooling: expected \"last_token\" or \"response_mean\"");
    }
  }
  c.validate();
  return c;
}

}  // namespace detail

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("short write on " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string format_fixed(double v, int digits) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

}  // namespace w2s
