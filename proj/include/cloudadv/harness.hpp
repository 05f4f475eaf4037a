#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cloudadv/attack.hpp"
#include "cloudadv/models.hpp"
#include "cloudadv/pggn.hpp"

namespace cloudadv::harness {

namespace fs = std::filesystem;
using imaging::Image;

// ---------------------------------------------------------------------------
// Records and metrics

struct ImageRecord {
  std::string id;
  std::size_t true_label = 0;
  std::size_t pre_label = 0;
  bool skipped = false;  // already misclassified, never attacked
  bool success = false;
  std::size_t queries = 0;
  std::size_t post_label = 0;
  double adversarial_loss = 0.0;
  double mse = 0.0;
  double fitness = 0.0;
  std::string adversarial_path;  // relative to the report directory
  std::string clean_path;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Metrics {
  std::size_t n_total = 0;
  std::size_t n_misclassified = 0;
  std::size_t n_adv = 0;
  std::size_t n_failed = 0;
  std::optional<double> asr;  // percent; null when nothing was attackable
  std::optional<double> aq;   // null without successes
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

// 100 * n_adv / (n_total - n_misclassified).
std::optional<double> asr(std::size_t n_total, std::size_t n_misclassified, std::size_t n_adv);
std::optional<double> asr(const std::vector<ImageRecord>& records);
// Mean queries over successful attacks only.
std::optional<double> aq(const std::vector<ImageRecord>& records);
Metrics summarize(const std::vector<ImageRecord>& records);

// counts[true][post] over attacked (non-skipped) records.
using Confusion = std::vector<std::vector<std::size_t>>;
Confusion confusion_matrix(const std::vector<ImageRecord>& records, std::size_t classes);

// ---------------------------------------------------------------------------
// Datasets

// One subdirectory per class holding PNG files; classes sorted
// lexicographically give the label indices, files are sorted within a class.
models::Dataset load_dataset_dir(const fs::path& root);
void save_dataset_dir(const models::Dataset& data, const fs::path& root);

// "synthetic" or "synthetic:<n_per_class>:<size>:<seed>", else a directory.
models::Dataset open_dataset(const std::string& source);

// Renumbers item labels to the model's label order when both carry the same
// class names. Differently named classes of equal count are taken by
// position; a count mismatch throws std::invalid_argument.
models::Dataset align_labels(models::Dataset data, const std::vector<std::string>& model_labels);

// ---------------------------------------------------------------------------
// Campaigns

enum class AttackMode { Optimized, RandomCloud };

struct CampaignConfig {
  attack::AttackConfig attack;
  AttackMode mode = AttackMode::Optimized;
  std::size_t max_images = 0;  // 0 attacks every image
  std::uint64_t seed = 0;      // per-image streams derive from it
  std::size_t workers = 1;     // images attacked concurrently
  bool save_images = true;
};

// Where the model, images and generator came from, recorded in reports.
struct Sources {
  std::string model;
  std::string dataset;
  std::string generator;
};

struct CampaignReport {
  Sources sources;
  std::vector<std::string> labels;
  CampaignConfig config;
  std::size_t latent_dim = 0;
  std::vector<ImageRecord> records;
  Metrics metrics;
  Confusion confusion;
  double wall_seconds = 0.0;
  bool complete = true;
};

using ProgressCallback = std::function<void(std::size_t done, std::size_t total, const ImageRecord&)>;

// Classifies each image, skips the misclassified ones and attacks the rest.
// With a non-empty out_dir writes report.json, records.csv, confusion.csv,
// clean/ and adv/ PNGs; on failure the partial report is flushed first.
CampaignReport run_campaign(const models::Dataset& data, models::TargetModel& model,
                            const pggn::GeneratorWeights& generator, const CampaignConfig& cfg,
                            const fs::path& out_dir, const Sources& sources = {},
                            const ProgressCallback& progress = {});

void write_report(const CampaignReport& report, const fs::path& out_dir);
CampaignReport read_report(const fs::path& out_dir);

std::string records_csv(const std::vector<ImageRecord>& records);
std::vector<ImageRecord> parse_records_csv(const std::string& text);
std::string confusion_csv(const Confusion& confusion, const std::vector<std::string>& labels);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> problems;
};

// Recomputes every aggregate of a written report from its records CSV and
// compares exactly.
VerifyResult verify_report(const fs::path& out_dir);

// ---------------------------------------------------------------------------
// Transfer and defense

struct TransferResult {
  std::size_t candidates = 0;     // surrogate successes found in the report
  std::size_t clean_correct = 0;  // of those, target right on the clean image
  std::size_t fooled = 0;         // of those, target wrong on the adversarial
  std::optional<double> tasr;
};

// Uses only surrogate-successful examples, read back from their PNGs.
TransferResult transfer_eval(const fs::path& report_dir, models::TargetModel& target);

struct DefenseResult {
  int quality = 0;
  std::size_t attacked = 0;
  std::size_t original_successes = 0;
  std::size_t defended_successes = 0;
  std::optional<double> original_asr;
  std::optional<double> defended_asr;
  // Clean images the defense alone pushes off their label; reported, never
  // counted as attack successes.
  std::size_t clean_flips = 0;
};

DefenseResult defense_eval(const fs::path& report_dir, int quality, models::TargetModel& model);

// ---------------------------------------------------------------------------
// Latent-dimension sweep

struct SweepRow {
  std::size_t q = 0;
  Metrics metrics;
};

inline const std::vector<std::size_t> kDefaultSweepQ{44, 48, 52, 56, 60};

// `generator_for(q)` supplies the weights for each latent dimension.
std::vector<SweepRow> sweep_q(const std::vector<std::size_t>& qs,
                              const std::function<pggn::GeneratorWeights(std::size_t)>& generator_for,
                              const models::Dataset& data, models::TargetModel& model, const CampaignConfig& cfg,
                              const fs::path& out_dir, const Sources& sources = {});
std::string sweep_csv(const std::vector<SweepRow>& rows);

// ---------------------------------------------------------------------------
// Config files: one "key = value" per line, '#' starts a comment.

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config(const std::string& text);
ConfigMap load_config(const fs::path& path);

// Applies the attack/campaign keys it knows (np, cr, f, alpha, mq, seed,
// workers, image_workers, max_images, k_lower, k_upper, t_lower, t_upper,
// channel_effects, max_channel_offset, cloud_color, mode). Unknown keys are
// left for the caller; malformed values throw std::invalid_argument.
void apply_config(const ConfigMap& config, CampaignConfig& cfg);

// The frozen-random generator used when no trained weights are supplied.
pggn::GeneratorWeights frozen_generator(std::size_t q, std::uint64_t seed);

std::string format_optional(const std::optional<double>& v, int decimals = 2);

}  // namespace cloudadv::harness
