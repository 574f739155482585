#pragma once

// System model: configuration, messages, hash signatures and channels.
//
// A message is a string of B bits.  Its hash is a length-L complex vector
// with entries alpha * exp(i*phi_k); the phases come from a counter-based
// mixer seeded by the message bits alone, so base station and devices can
// evaluate the same hash independently.
//
// Message-to-phase wire contract (in addition to rng.hpp):
//   - bits are packed big-endian into 64-bit words: the first message bit is
//     the most significant bit of word 0, and a trailing partial word keeps
//     its bits in the high positions with zero padding below;
//   - the words are folded into a 64-bit seed h starting from
//     0x243f6a8885a308d3 via h = mix64(h ^ word);
//   - phase k (0-based) is 2*pi * ((mix64(h + (k+1)*0x9e3779b97f4a7c15) >> 11) * 2^-53).

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hashbeam/errors.hpp"
#include "hashbeam/rng.hpp"

namespace hashbeam {

struct SystemConfig {
  int num_antennas = 10;        // M
  int hash_len = 1;             // L
  int num_decoded = 10;         // K
  int num_undecoded = 10;       // K_u
  int message_bits = 16;        // B
  double noise_var = 1.0;       // sigma^2, total variance per complex sample
  double hash_mag = 1.0;        // alpha
  std::uint64_t master_seed = 1;

  int total_users() const { return num_decoded + num_undecoded; }

  // LMMSE regularizer alpha^2 * sigma^2; zero in noiseless runs.
  double lmmse_reg() const { return hash_mag * hash_mag * noise_var; }

  void validate() const {
    if (num_antennas < 1) throw ConfigError("num_antennas must be >= 1");
    if (hash_len < 1) throw ConfigError("hash_len must be >= 1");
    if (num_decoded < 1) throw ConfigError("num_decoded must be >= 1");
    if (num_undecoded < 0) throw ConfigError("num_undecoded must be >= 0");
    if (message_bits < 1 || message_bits > 4096)
      throw ConfigError("message_bits must be in [1, 4096]");
    if (!(noise_var >= 0.0)) throw ConfigError("noise_var must be >= 0");
    if (!(hash_mag > 0.0)) throw ConfigError("hash_mag must be > 0");
  }

  bool operator==(const SystemConfig&) const = default;
};

namespace detail {
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "num_antennas", "hash_len",  "num_decoded", "num_undecoded",
      "message_bits", "noise_var", "hash_mag",    "master_seed"};
  return keys;
}
}  // namespace detail

// Strict schema: every field present, no unknown keys.
inline SystemConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& item : j.items()) {
    const auto& keys = detail::config_keys();
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end())
      throw ConfigError("unknown config key '" + item.key() + "'");
  }
  for (const auto& key : detail::config_keys()) {
    if (!j.contains(key)) throw ConfigError("missing config key '" + key + "'");
  }
  SystemConfig c;
  try {
    c.num_antennas = j.at("num_antennas").get<int>();
    c.hash_len = j.at("hash_len").get<int>();
    c.num_decoded = j.at("num_decoded").get<int>();
    c.num_undecoded = j.at("num_undecoded").get<int>();
    c.message_bits = j.at("message_bits").get<int>();
    c.noise_var = j.at("noise_var").get<double>();
    c.hash_mag = j.at("hash_mag").get<double>();
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const SystemConfig& c) {
  return nlohmann::json{{"num_antennas", c.num_antennas},
                        {"hash_len", c.hash_len},
                        {"num_decoded", c.num_decoded},
                        {"num_undecoded", c.num_undecoded},
                        {"message_bits", c.message_bits},
                        {"noise_var", c.noise_var},
                        {"hash_mag", c.hash_mag},
                        {"master_seed", c.master_seed}};
}

// ---------------------------------------------------------------------------
// Messages and hashes

struct Message {
  int bits = 0;
  std::vector<std::uint64_t> words;  // big-endian packed, high bits first

  auto operator<=>(const Message&) const = default;
};

inline Message random_message(RngStream& rng, int bits) {
  if (bits < 1) throw ConfigError("message_bits must be >= 1");
  Message m;
  m.bits = bits;
  int remaining = bits;
  while (remaining > 0) {
    std::uint64_t w = rng.next_u64();
    if (remaining < 64) w &= ~0ull << (64 - remaining);
    m.words.push_back(w);
    remaining -= 64;
  }
  return m;
}

inline std::uint64_t fold_message(const Message& m) {
  std::uint64_t h = 0x243f6a8885a308d3ull;
  for (std::uint64_t w : m.words) h = mix64(h ^ w);
  return h;
}

inline std::vector<double> derive_phases(const Message& m, int hash_len) {
  if (hash_len < 1) throw ConfigError("hash_len must be >= 1");
  RngStream stream(fold_message(m));
  std::vector<double> phases(hash_len);
  for (double& p : phases) p = stream.next_phase();
  return phases;
}

inline Eigen::VectorXcd hash_message(const Message& m, int hash_len, double hash_mag) {
  if (!(hash_mag > 0.0)) throw ConfigError("hash_mag must be > 0");
  RngStream stream(fold_message(m));
  Eigen::VectorXcd h(hash_len);
  for (int k = 0; k < hash_len; ++k) {
    const double phi = stream.next_phase();
    h[k] = Complex(hash_mag * std::cos(phi), hash_mag * std::sin(phi));
  }
  return h;
}

// i.i.d. CN(0, 1) entries.
inline Eigen::VectorXcd sample_channel(RngStream& rng, int num_antennas) {
  if (num_antennas < 1) throw ConfigError("num_antennas must be >= 1");
  Eigen::VectorXcd h(num_antennas);
  for (int m = 0; m < num_antennas; ++m) h[m] = rng.next_cnormal();
  return h;
}

// ---------------------------------------------------------------------------
// Scenarios

struct UserSample {
  Message message;
  Eigen::VectorXcd channel;
};

struct Scenario {
  SystemConfig config;
  std::vector<UserSample> decoded;
  std::vector<UserSample> undecoded;
};

// Draws K + K_u users with pairwise distinct messages and independent
// channels.  All streams derive from scenario_key, so the same key
// reproduces the same scenario.
inline Scenario build_scenario(const SystemConfig& config, std::uint64_t scenario_key) {
  config.validate();
  const int total = config.total_users();
  if (config.message_bits < 63 &&
      static_cast<std::uint64_t>(total) > (1ull << config.message_bits)) {
    throw ConfigError("need " + std::to_string(total) + " distinct messages but only " +
                      std::to_string(1ull << config.message_bits) + " exist at message_bits=" +
                      std::to_string(config.message_bits));
  }

  Scenario scen;
  scen.config = config;
  std::set<Message> seen;
  long redraws_left = 100L * total;
  for (int u = 0; u < total; ++u) {
    RngStream msg_rng = user_stream(scenario_key, tag::message, u);
    Message m = random_message(msg_rng, config.message_bits);
    while (seen.count(m)) {
      if (--redraws_left < 0)
        throw ConfigError("could not draw distinct messages; message space too small");
      m = random_message(msg_rng, config.message_bits);
    }
    seen.insert(m);
    RngStream chan_rng = user_stream(scenario_key, tag::channel, u);
    UserSample user{std::move(m), sample_channel(chan_rng, config.num_antennas)};
    if (u < config.num_decoded)
      scen.decoded.push_back(std::move(user));
    else
      scen.undecoded.push_back(std::move(user));
  }
  return scen;
}

// L x n matrix of hash columns.
inline Eigen::MatrixXcd hash_matrix(const std::vector<UserSample>& users, int hash_len,
                                    double hash_mag) {
  Eigen::MatrixXcd A(hash_len, static_cast<Eigen::Index>(users.size()));
  for (std::size_t k = 0; k < users.size(); ++k)
    A.col(static_cast<Eigen::Index>(k)) = hash_message(users[k].message, hash_len, hash_mag);
  return A;
}

// M x n matrix of channel columns.
inline Eigen::MatrixXcd channel_matrix(const std::vector<UserSample>& users) {
  if (users.empty()) return {};
  Eigen::MatrixXcd H(users[0].channel.size(), static_cast<Eigen::Index>(users.size()));
  for (std::size_t k = 0; k < users.size(); ++k)
    H.col(static_cast<Eigen::Index>(k)) = users[k].channel;
  return H;
}

}  // namespace hashbeam
