#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cloudadv/harness.hpp"

namespace cloudadv::harness {

using nlohmann::json;

namespace {

constexpr const char* kReportFormat = "cloudadv-campaign-report";
constexpr int kReportVersion = 1;
constexpr const char* kRecordsHeader =
    "id,true_label,pre_label,skipped,success,queries,post_label,adversarial_loss,mse,fitness,adversarial_path,"
    "clean_path";

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quote in CSV line");
  fields.push_back(std::move(cur));
  return fields;
}

std::size_t to_size(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
  return static_cast<std::size_t>(v);
}

double to_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "1") return true;
  if (s == "0") return false;
  throw std::invalid_argument("not a 0/1 flag: '" + s + "'");
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json metrics_json(const Metrics& m) {
  return {{"n_total", m.n_total}, {"n_misclassified", m.n_misclassified}, {"n_adv", m.n_adv},
          {"n_failed", m.n_failed}, {"asr", optional_json(m.asr)},        {"aq", optional_json(m.aq)}};
}

Metrics metrics_from(const json& j) {
  Metrics m;
  m.n_total = j.at("n_total").get<std::size_t>();
  m.n_misclassified = j.at("n_misclassified").get<std::size_t>();
  m.n_adv = j.at("n_adv").get<std::size_t>();
  m.n_failed = j.at("n_failed").get<std::size_t>();
  m.asr = optional_from(j.at("asr"));
  m.aq = optional_from(j.at("aq"));
  return m;
}

json config_json(const CampaignConfig& c, std::size_t q) {
  const auto& a = c.attack;
  return {{"np", a.de.np},
          {"cr", a.de.cr},
          {"f", a.de.f},
          {"mq", a.de.max_evals},
          {"exclude_target", a.de.exclude_target},
          {"de_workers", a.de.workers},
          {"alpha", a.alpha},
          {"q", q},
          {"k_lower", a.k_lower},
          {"k_upper", a.k_upper},
          {"t_lower", a.t_lower},
          {"t_upper", a.t_upper},
          {"z_bound", a.z_bound},
          {"channel_effects", a.channel_effects},
          {"max_channel_offset", a.max_channel_offset},
          {"channel_magnitude", a.channel_magnitude},
          {"cloud_color", a.cloud_color == attack::CloudColor::White ? "white" : "mean_to_white"},
          {"mode", c.mode == AttackMode::RandomCloud ? "random" : "optimized"},
          {"max_images", c.max_images},
          {"seed", c.seed},
          {"image_workers", c.workers},
          {"mse_divisor", "pixels x channels"},
          {"param_layout", "z,k,t v" + std::to_string(attack::kLayoutVersion)}};
}

CampaignConfig config_from(const json& j) {
  CampaignConfig c;
  auto& a = c.attack;
  a.de.np = j.at("np").get<std::size_t>();
  a.de.cr = j.at("cr").get<double>();
  a.de.f = j.at("f").get<double>();
  a.de.max_evals = j.at("mq").get<std::size_t>();
  a.de.exclude_target = j.at("exclude_target").get<bool>();
  a.de.workers = j.at("de_workers").get<std::size_t>();
  a.alpha = j.at("alpha").get<double>();
  a.k_lower = j.at("k_lower").get<std::array<double, attack::kMixCount>>();
  a.k_upper = j.at("k_upper").get<std::array<double, attack::kMixCount>>();
  a.t_lower = j.at("t_lower").get<double>();
  a.t_upper = j.at("t_upper").get<double>();
  a.z_bound = j.at("z_bound").get<double>();
  a.channel_effects = j.at("channel_effects").get<bool>();
  a.max_channel_offset = j.at("max_channel_offset").get<int>();
  a.channel_magnitude = j.at("channel_magnitude").get<std::array<double, 3>>();
  a.cloud_color = j.at("cloud_color") == "white" ? attack::CloudColor::White : attack::CloudColor::MeanToWhite;
  c.mode = j.at("mode") == "random" ? AttackMode::RandomCloud : AttackMode::Optimized;
  c.max_images = j.at("max_images").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.workers = j.at("image_workers").get<std::size_t>();
  return c;
}

json record_json(const ImageRecord& r) {
  return {{"id", r.id},
          {"true_label", r.true_label},
          {"pre_label", r.pre_label},
          {"skipped", r.skipped},
          {"success", r.success},
          {"queries", r.queries},
          {"post_label", r.post_label},
          {"adversarial_loss", r.adversarial_loss},
          {"mse", r.mse},
          {"fitness", r.fitness},
          {"adversarial_path", r.adversarial_path},
          {"clean_path", r.clean_path}};
}

ImageRecord record_from(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.true_label = j.at("true_label").get<std::size_t>();
  r.pre_label = j.at("pre_label").get<std::size_t>();
  r.skipped = j.at("skipped").get<bool>();
  r.success = j.at("success").get<bool>();
  r.queries = j.at("queries").get<std::size_t>();
  r.post_label = j.at("post_label").get<std::size_t>();
  r.adversarial_loss = j.at("adversarial_loss").get<double>();
  r.mse = j.at("mse").get<double>();
  r.fitness = j.at("fitness").get<double>();
  r.adversarial_path = j.at("adversarial_path").get<std::string>();
  r.clean_path = j.at("clean_path").get<std::string>();
  return r;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + p.string());
}

}  // namespace

std::string records_csv(const std::vector<ImageRecord>& records) {
  std::string out = std::string(kRecordsHeader) + "\n";
  for (const auto& r : records) {
    out += quote(r.id) + "," + std::to_string(r.true_label) + "," + std::to_string(r.pre_label) + "," +
           (r.skipped ? "1" : "0") + "," + (r.success ? "1" : "0") + "," + std::to_string(r.queries) + "," +
           std::to_string(r.post_label) + "," + exact(r.adversarial_loss) + "," + exact(r.mse) + "," +
           exact(r.fitness) + "," + quote(r.adversarial_path) + "," + quote(r.clean_path) + "\n";
  }
  return out;
}

std::vector<ImageRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRecordsHeader) throw std::invalid_argument("records CSV header mismatch");
  std::vector<ImageRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) throw std::invalid_argument("records CSV row has " + std::to_string(f.size()) + " fields");
    ImageRecord r;
    r.id = f[0];
    r.true_label = to_size(f[1]);
    r.pre_label = to_size(f[2]);
    r.skipped = to_bool(f[3]);
    r.success = to_bool(f[4]);
    r.queries = to_size(f[5]);
    r.post_label = to_size(f[6]);
    r.adversarial_loss = to_double(f[7]);
    r.mse = to_double(f[8]);
    r.fitness = to_double(f[9]);
    r.adversarial_path = f[10];
    r.clean_path = f[11];
    records.push_back(std::move(r));
  }
  return records;
}

std::string confusion_csv(const Confusion& confusion, const std::vector<std::string>& labels) {
  std::string out = "true\\predicted";
  for (const auto& l : labels) out += "," + quote(l);
  out += "\n";
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    out += quote(labels.at(i));
    for (std::size_t v : confusion[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

void write_report(const CampaignReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  json records = json::array();
  for (const auto& r : report.records) records.push_back(record_json(r));
  const json j{{"format", kReportFormat},
               {"version", kReportVersion},
               {"complete", report.complete},
               {"model", report.sources.model},
               {"dataset", report.sources.dataset},
               {"generator", report.sources.generator},
               {"labels", report.labels},
               {"config", config_json(report.config, report.latent_dim)},
               {"metrics", metrics_json(report.metrics)},
               {"confusion", report.confusion},
               {"timing", {{"wall_seconds", report.wall_seconds}}},
               {"records", records}};
  write_text(out_dir / "report.json", j.dump(2) + "\n");
  write_text(out_dir / "records.csv", records_csv(report.records));
  write_text(out_dir / "confusion.csv", confusion_csv(report.confusion, report.labels));
}

CampaignReport read_report(const fs::path& out_dir) {
  json j;
  try {
    j = json::parse(read_text(out_dir / "report.json"));
  } catch (const json::exception& e) {
    throw std::runtime_error("report.json is not valid JSON: " + std::string(e.what()));
  }
  if (j.value("format", "") != kReportFormat) throw std::runtime_error("not a campaign report");
  if (j.value("version", 0) != kReportVersion) throw std::runtime_error("unsupported report version");
  CampaignReport r;
  try {
    r.complete = j.at("complete").get<bool>();
    r.sources.model = j.at("model").get<std::string>();
    r.sources.dataset = j.at("dataset").get<std::string>();
    r.sources.generator = j.at("generator").get<std::string>();
    r.labels = j.at("labels").get<std::vector<std::string>>();
    r.config = config_from(j.at("config"));
    r.latent_dim = j.at("config").at("q").get<std::size_t>();
    r.metrics = metrics_from(j.at("metrics"));
    r.confusion = j.at("confusion").get<Confusion>();
    r.wall_seconds = j.at("timing").at("wall_seconds").get<double>();
    for (const auto& rec : j.at("records")) r.records.push_back(record_from(rec));
  } catch (const json::exception& e) {
    throw std::runtime_error("report.json is malformed: " + std::string(e.what()));
  }
  return r;
}

VerifyResult verify_report(const fs::path& out_dir) {
  VerifyResult v;
  auto fail = [&](std::string msg) {
    v.ok = false;
    v.problems.push_back(std::move(msg));
  };
  CampaignReport report;
  std::vector<ImageRecord> csv;
  try {
    report = read_report(out_dir);
    csv = parse_records_csv(read_text(out_dir / "records.csv"));
  } catch (const std::exception& e) {
    fail(e.what());
    return v;
  }
  if (csv != report.records) fail("records.csv and report.json records differ");

  const Metrics m = summarize(csv);
  const Metrics& p = report.metrics;
  if (m.n_total != p.n_total) fail("n_total " + std::to_string(p.n_total) + " != " + std::to_string(m.n_total));
  if (m.n_misclassified != p.n_misclassified) fail("n_misclassified disagrees with records");
  if (m.n_adv != p.n_adv) fail("n_adv disagrees with records");
  if (m.n_failed != p.n_failed) fail("n_failed disagrees with records");
  if (p.n_total != p.n_misclassified + p.n_adv + p.n_failed) fail("totals do not add up");
  if (m.asr != p.asr) fail("ASR " + format_optional(p.asr, 17) + " != recomputed " + format_optional(m.asr, 17));
  if (m.aq != p.aq) fail("AQ " + format_optional(p.aq, 17) + " != recomputed " + format_optional(m.aq, 17));
  for (const auto& r : csv) {
    if (r.success && !r.skipped && r.queries > report.config.attack.de.max_evals) {
      fail("record " + r.id + " exceeds the query budget");
    }
    if (r.success && r.post_label == r.pre_label) fail("record " + r.id + " marked successful without a label change");
  }
  try {
    const Confusion c = confusion_matrix(csv, report.labels.size());
    if (c != report.confusion) fail("confusion matrix disagrees with records");
    if (read_text(out_dir / "confusion.csv") != confusion_csv(c, report.labels)) {
      fail("confusion.csv disagrees with records");
    }
  } catch (const std::exception& e) {
    fail(e.what());
  }
  return v;
}

}  // namespace cloudadv::harness
