#include <algorithm>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "cloudadv/harness.hpp"

namespace cloudadv::harness {

namespace {

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad " + what + " '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

models::Dataset load_dataset_dir(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory " + root.string() + " does not exist");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) classes.push_back(e.path());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw std::runtime_error("dataset directory " + root.string() + " has no class subdirectories");
  models::Dataset ds;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    ds.labels.push_back(classes[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[label])) {
      if (e.is_regular_file() && is_png(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ds.items.push_back({ds.labels.back() + "/" + f.stem().string(), imaging::load_png(f), label});
    }
  }
  if (ds.items.empty()) throw std::runtime_error("dataset directory " + root.string() + " holds no PNG files");
  return ds;
}

void save_dataset_dir(const models::Dataset& data, const fs::path& root) {
  for (const auto& name : data.labels) fs::create_directories(root / name);
  for (const auto& item : data.items) {
    const std::string stem = item.id.substr(item.id.find_last_of('/') + 1);
    imaging::save_png(item.image, root / data.labels.at(item.label) / (stem + ".png"));
  }
}

models::Dataset align_labels(models::Dataset data, const std::vector<std::string>& model_labels) {
  if (data.labels.size() != model_labels.size()) {
    throw std::invalid_argument("dataset has " + std::to_string(data.labels.size()) + " classes but the model has " +
                                std::to_string(model_labels.size()));
  }
  if (data.labels == model_labels) return data;
  std::vector<std::string> a = data.labels, b = model_labels;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) {
    spdlog::warn("dataset class names differ from the model's; matching classes by position");
    return data;
  }
  std::vector<std::size_t> to_model(data.labels.size());
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    to_model[i] = static_cast<std::size_t>(
        std::find(model_labels.begin(), model_labels.end(), data.labels[i]) - model_labels.begin());
  }
  for (auto& item : data.items) item.label = to_model.at(item.label);
  data.labels = model_labels;
  return data;
}

models::Dataset open_dataset(const std::string& source) {
  if (source == "synthetic" || source.rfind("synthetic:", 0) == 0) {
    std::size_t n = 10, size = 64;
    std::uint64_t seed = 2;
    if (source.size() > 10) {
      std::vector<std::string> parts;
      std::size_t start = 10;
      while (true) {
        const std::size_t colon = source.find(':', start);
        parts.push_back(source.substr(start, colon - start));
        if (colon == std::string::npos) break;
        start = colon + 1;
      }
      if (parts.size() > 3) throw std::invalid_argument("synthetic source is synthetic[:n_per_class[:size[:seed]]]");
      if (parts.size() > 0) n = parse_count(parts[0], "images per class");
      if (parts.size() > 1) size = parse_count(parts[1], "image size");
      if (parts.size() > 2) seed = parse_count(parts[2], "seed");
    }
    return models::synth_dataset(n, size, seed);
  }
  return load_dataset_dir(source);
}

}  // namespace cloudadv::harness
