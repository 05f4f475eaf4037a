#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cloudadv/harness.hpp"

namespace cloudadv::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T v{};
  in >> v;
  if (in.fail() || !in.eof()) throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + value + "'");
}

template <std::size_t N>
std::array<double, N> parse_list(const std::string& key, const std::string& value) {
  std::array<double, N> out{};
  std::size_t count = 0;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (count == N) break;
    out[count++] = parse_number<double>(key, trim(item));
  }
  if (count != N || in.good()) {
    throw std::invalid_argument("config key '" + key + "': expected " + std::to_string(N) + " comma-separated numbers");
  }
  return out;
}

}  // namespace

ConfigMap parse_config(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void apply_config(const ConfigMap& config, CampaignConfig& cfg) {
  auto& a = cfg.attack;
  for (const auto& [key, value] : config) {
    if (key == "np") {
      a.de.np = parse_number<std::size_t>(key, value);
    } else if (key == "cr") {
      a.de.cr = parse_number<double>(key, value);
    } else if (key == "f") {
      a.de.f = parse_number<double>(key, value);
    } else if (key == "mq") {
      a.de.max_evals = parse_number<std::size_t>(key, value);
    } else if (key == "alpha") {
      a.alpha = parse_number<double>(key, value);
    } else if (key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "workers") {
      a.de.workers = parse_number<std::size_t>(key, value);
    } else if (key == "image_workers") {
      cfg.workers = parse_number<std::size_t>(key, value);
    } else if (key == "max_images") {
      cfg.max_images = parse_number<std::size_t>(key, value);
    } else if (key == "k_lower") {
      a.k_lower = parse_list<attack::kMixCount>(key, value);
    } else if (key == "k_upper") {
      a.k_upper = parse_list<attack::kMixCount>(key, value);
    } else if (key == "t_lower") {
      a.t_lower = parse_number<double>(key, value);
    } else if (key == "t_upper") {
      a.t_upper = parse_number<double>(key, value);
    } else if (key == "channel_effects") {
      a.channel_effects = parse_bool(key, value);
    } else if (key == "max_channel_offset") {
      a.max_channel_offset = parse_number<int>(key, value);
    } else if (key == "channel_magnitude") {
      a.channel_magnitude = parse_list<3>(key, value);
    } else if (key == "exclude_target") {
      a.de.exclude_target = parse_bool(key, value);
    } else if (key == "cloud_color") {
      if (value == "mean_to_white") {
        a.cloud_color = attack::CloudColor::MeanToWhite;
      } else if (value == "white") {
        a.cloud_color = attack::CloudColor::White;
      } else {
        throw std::invalid_argument("config key 'cloud_color': expected mean_to_white or white");
      }
    } else if (key == "mode") {
      if (value == "optimized") {
        cfg.mode = AttackMode::Optimized;
      } else if (value == "random") {
        cfg.mode = AttackMode::RandomCloud;
      } else {
        throw std::invalid_argument("config key 'mode': expected optimized or random");
      }
    }
  }
}

}  // namespace cloudadv::harness
