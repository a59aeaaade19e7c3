#pragma once

// Text checkpoints: every double in %.17g so load(save(x)) is bit-exact,
// the full configuration embedded, a content hash trailer, atomic writes.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pitchrl/config.hpp"
#include "pitchrl/errors.hpp"
#include "pitchrl/trainer.hpp"

namespace pitchrl {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "pitchrl-checkpoint";

struct Checkpoint {
  Agent agent;
  WorkbenchConfig config;
  std::string digest;
};

namespace detail {

template <class Range>
void write_values(std::ostringstream& out, const std::string& name, const Range& values) {
  out << name << ' ' << values.size() << '\n';
  bool first = true;
  for (double v : values) {
    out << (first ? "" : " ") << format_double(v);
    first = false;
  }
  out << '\n';
}

inline void write_adam(std::ostringstream& out, const std::string& name, const AdamState& a) {
  out << name << ' ' << format_double(a.learning_rate) << ' ' << format_double(a.beta1) << ' '
      << format_double(a.beta2) << ' ' << format_double(a.epsilon) << ' ' << a.step << '\n';
  write_values(out, name + "_m", a.first_moment);
  write_values(out, name + "_v", a.second_moment);
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

class Reader {
 public:
  explicit Reader(std::vector<std::string> lines) : lines_(std::move(lines)) {}

  std::istringstream expect(const std::string& key) {
    if (pos_ >= lines_.size()) fail("unexpected end of data, expected '" + key + "'");
    std::istringstream in(lines_[pos_]);
    std::string k;
    in >> k;
    if (k != key) fail("expected '" + key + "', found '" + k + "'");
    ++pos_;
    return in;
  }

  const std::string& raw() {
    if (pos_ >= lines_.size()) fail("unexpected end of data");
    return lines_[pos_++];
  }

  std::vector<double> values(const std::string& key) {
    auto head = expect(key);
    std::size_t n = 0;
    if (!(head >> n)) fail("'" + key + "': missing count");
    std::istringstream body(raw());
    std::vector<double> out;
    out.reserve(n);
    std::string tok;
    while (body >> tok) out.push_back(number(tok));
    if (out.size() != n)
      fail("'" + key + "': declared " + std::to_string(n) + " values, found " + std::to_string(out.size()));
    return out;
  }

  static double number(const std::string& tok) {
    if (const auto v = detail::to_double(tok)) return *v;
    fail("malformed number '" + tok + "'");
  }

  AdamState adam(const std::string& key) {
    auto in = expect(key);
    AdamState a;
    std::string lr, b1, b2, eps;
    if (!(in >> lr >> b1 >> b2 >> eps >> a.step)) fail("'" + key + "': malformed header");
    a.learning_rate = number(lr);
    a.beta1 = number(b1);
    a.beta2 = number(b2);
    a.epsilon = number(eps);
    a.first_moment = values(key + "_m");
    a.second_moment = values(key + "_v");
    if (a.first_moment.size() != a.second_moment.size()) fail("'" + key + "': moment sizes differ");
    return a;
  }

  [[noreturn]] static void fail(const std::string& what) {
    throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint: " + what);
  }

 private:
  std::vector<std::string> lines_;
  std::size_t pos_ = 0;
};

inline std::vector<int> parse_dims(std::istringstream& in) {
  std::vector<int> d;
  int x;
  while (in >> x) d.push_back(x);
  if (d.size() < 2) Reader::fail("network needs at least two layer sizes");
  for (int w : d)
    if (w <= 0) Reader::fail("non-positive layer width " + std::to_string(w));
  return d;
}

inline Mlp read_network(Reader& r, const std::string& name) {
  auto dims_line = r.expect(name + "_dims");
  Mlp net(parse_dims(dims_line));
  const auto p = r.values(name + "_params");
  if (p.size() != net.parameter_count())
    Reader::fail(name + ": " + std::to_string(p.size()) + " parameters do not fit the declared dimensions (" +
                 std::to_string(net.parameter_count()) + " expected)");
  std::copy(p.begin(), p.end(), net.parameters().begin());
  return net;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Agent& agent, const WorkbenchConfig& cfg) {
  std::ostringstream out;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config_digest " << config_digest(cfg) << '\n';
  out << "episode " << agent.episode << '\n';
  out << "amplitude_cap " << detail::format_double(agent.amplitude_cap) << '\n';
  out << "alpha " << detail::format_double(agent.trpo.alpha) << '\n';
  out << "log_var_train " << detail::format_double(agent.policy.log_var_train) << '\n';
  for (const auto& [name, net] : {std::pair<std::string, const Mlp*>{"policy", &agent.policy.mean_net},
                                  std::pair<std::string, const Mlp*>{"value", &agent.value_net}}) {
    out << name << "_dims";
    for (int d : net->dims()) out << ' ' << d;
    out << '\n';
    detail::write_values(out, name + "_params", net->parameters());
  }
  out << "normalizer " << agent.normalizer.count() << ' ' << detail::format_double(agent.normalizer.std_floor())
      << '\n';
  detail::write_values(out, "normalizer_mean", agent.normalizer.mean());
  detail::write_values(out, "normalizer_m2", agent.normalizer.m2());
  detail::write_adam(out, "adam_policy", agent.trpo.policy_adam);
  detail::write_adam(out, "adam_value", agent.trpo.value_adam);
  const std::string config_text = serialize_config(cfg);
  std::size_t config_lines = 0;
  for (char c : config_text) config_lines += c == '\n' ? 1 : 0;
  out << "config " << config_lines << '\n' << config_text;
  std::string body = out.str();
  body += "content_hash " + detail::hex64(detail::fnv1a(body)) + "\nend\n";
  return body;
}

/// Parses checkpoint text. Errors are distinguished by kind: unknown version,
/// hash or digest mismatch, truncation, and malformed content.
inline Checkpoint parse_checkpoint(const std::string& text,
                                   const std::optional<std::string>& expected_digest = std::nullopt) {
  using K = CheckpointError::Kind;
  std::vector<std::string> lines;
  {
    std::istringstream in(text);
    std::string l;
    while (std::getline(in, l)) lines.push_back(l);
  }
  if (lines.empty()) throw CheckpointError(K::kTruncated, "checkpoint: empty file");
  {
    std::istringstream head(lines[0]);
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kCheckpointMagic) throw CheckpointError(K::kFormat, "checkpoint: not a checkpoint file");
    if (version != kCheckpointVersion)
      throw CheckpointError(K::kVersion, "checkpoint: version " + std::to_string(version) +
                                             " is not supported (expected " +
                                             std::to_string(kCheckpointVersion) + ")");
  }
  if (lines.size() < 3 || lines.back() != "end" || lines[lines.size() - 2].rfind("content_hash ", 0) != 0)
    throw CheckpointError(K::kTruncated, "checkpoint: missing trailer, file is truncated");
  const std::size_t trailer = text.rfind("content_hash ");
  const std::string stored_hash = lines[lines.size() - 2].substr(13);
  if (detail::hex64(detail::fnv1a(std::string_view(text).substr(0, trailer))) != stored_hash)
    throw CheckpointError(K::kDigest, "checkpoint: content hash mismatch, file was modified or corrupted");
  lines.resize(lines.size() - 2);

  detail::Reader r(std::move(lines));
  r.raw();
  Checkpoint cp;
  r.expect("config_digest") >> cp.digest;
  int episode = 0;
  if (!(r.expect("episode") >> episode)) detail::Reader::fail("malformed episode");
  std::string tok;
  r.expect("amplitude_cap") >> tok;
  const double cap = detail::Reader::number(tok);
  r.expect("alpha") >> tok;
  const double alpha = detail::Reader::number(tok);
  r.expect("log_var_train") >> tok;
  const double log_var = detail::Reader::number(tok);
  Mlp policy_net = detail::read_network(r, "policy");
  Mlp value_net = detail::read_network(r, "value");
  std::uint64_t count = 0;
  {
    auto in = r.expect("normalizer");
    if (!(in >> count >> tok)) detail::Reader::fail("malformed normalizer header");
  }
  const double floor = detail::Reader::number(tok);
  auto mean = r.values("normalizer_mean");
  auto m2 = r.values("normalizer_m2");
  if (mean.size() != kObservationSize || m2.size() != kObservationSize)
    detail::Reader::fail("normalizer must have " + std::to_string(kObservationSize) + " features");
  AdamState adam_policy = r.adam("adam_policy");
  AdamState adam_value = r.adam("adam_value");
  std::size_t config_lines = 0;
  if (!(r.expect("config") >> config_lines)) detail::Reader::fail("malformed config header");
  std::string config_text;
  for (std::size_t i = 0; i < config_lines; ++i) config_text += r.raw() + "\n";
  try {
    cp.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    detail::Reader::fail(std::string("embedded config: ") + e.what());
  }
  if (config_digest(cp.config) != cp.digest)
    throw CheckpointError(K::kDigest, "checkpoint: embedded config does not match its digest");
  if (expected_digest && *expected_digest != cp.digest)
    throw CheckpointError(K::kDigest, "checkpoint: config digest " + cp.digest + " differs from expected " +
                                          *expected_digest);

  if (policy_net.input_size() != kObservationSize || policy_net.output_size() != 1 ||
      value_net.input_size() != kObservationSize || value_net.output_size() != 1)
    detail::Reader::fail("networks must map " + std::to_string(kObservationSize) + " features to 1 output");
  if (adam_policy.first_moment.size() != policy_net.parameter_count() + 1 ||
      adam_value.first_moment.size() != value_net.parameter_count())
    detail::Reader::fail("optimizer state does not match network sizes");

  cp.agent.policy = GaussianPolicy{std::move(policy_net), log_var, cp.config.exploration};
  cp.agent.value_net = std::move(value_net);
  cp.agent.normalizer = Normalizer(kObservationSize, floor);
  cp.agent.normalizer.restore(std::move(mean), std::move(m2), count);
  cp.agent.trpo.alpha = alpha;
  cp.agent.trpo.policy_adam = std::move(adam_policy);
  cp.agent.trpo.value_adam = std::move(adam_value);
  cp.agent.amplitude_cap = cap;
  cp.agent.episode = episode;
  return cp;
}

/// Writes to a temporary sibling and renames it over `path`.
inline void save_checkpoint(const std::filesystem::path& path, const Agent& agent, const WorkbenchConfig& cfg) {
  const std::string text = serialize_checkpoint(agent, cfg);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: cannot write " + tmp.string());
    f << text;
    f.flush();
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: rename failed: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<std::string>& expected_digest = std::nullopt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str(), expected_digest);
}

}  // namespace pitchrl
