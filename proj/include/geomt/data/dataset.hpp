#pragma once

// Dataset directory layout:
//   <root>/dataset.txt                      manifest (optional)
//   <root>/<domain>/img/<patch_id>.bin      image
//   <root>/<domain>/msk/<patch_id>.bin      label (source domains only)
//   <root>/<domain>/meta/<patch_id>.txt     metadata record
//   <root>/eval_labels/<patch_id>.bin       held-out target labels
// The training-facing loader never looks inside eval_labels/.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "geomt/data/patch.hpp"
#include "geomt/data/text.hpp"
#include "geomt/error.hpp"

namespace geomt {

inline constexpr const char* kEvalLabelsDir = "eval_labels";

struct DatasetManifest {
  int num_classes = 0;  // evaluable classes C; label C is "other"
  int bands = 5;
  int image_size = 0;
  double gsd_m = kDefaultGsd;
  std::vector<std::string> source_domains;
  std::vector<std::string> target_domains;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline void write_manifest(const std::filesystem::path& root, const DatasetManifest& m) {
  std::filesystem::create_directories(root);
  std::ofstream out(root / "dataset.txt", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + root.string());
  out << "num_classes = " << m.num_classes << '\n'
      << "bands = " << m.bands << '\n'
      << "image_size = " << m.image_size << '\n'
      << "gsd_m = " << text::format_double(m.gsd_m) << '\n'
      << "source_domains = " << text::join(m.source_domains) << '\n'
      << "target_domains = " << text::join(m.target_domains) << '\n';
}

inline std::optional<DatasetManifest> read_manifest(const std::filesystem::path& root) {
  const auto path = root / "dataset.txt";
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto kv = read_key_values(path);
  DatasetManifest m;
  auto it = kv.find("num_classes");
  if (it != kv.end() && !text::parse_int(it->second, m.num_classes)) throw DataError("bad num_classes in manifest");
  it = kv.find("bands");
  if (it != kv.end() && !text::parse_int(it->second, m.bands)) throw DataError("bad bands in manifest");
  it = kv.find("image_size");
  if (it != kv.end() && !text::parse_int(it->second, m.image_size)) throw DataError("bad image_size in manifest");
  it = kv.find("gsd_m");
  if (it != kv.end() && !text::parse_double(it->second, m.gsd_m)) throw DataError("bad gsd_m in manifest");
  it = kv.find("source_domains");
  if (it != kv.end()) m.source_domains = text::split(it->second, ',');
  it = kv.find("target_domains");
  if (it != kv.end()) m.target_domains = text::split(it->second, ',');
  return m;
}

struct LoadOptions {
  std::vector<std::string> domains;  // empty: every domain directory
  int expected_bands = 0;            // 0: take from manifest, if any
  int num_classes = 0;               // 0: take from manifest; labels must lie in [0, C]
  int remap_above = -1;              // >= 0: labels above this value become "other"
};

struct PatchEntry {
  std::string patch_id;
  std::string domain;
  std::filesystem::path image;
  std::filesystem::path meta;
  std::optional<std::filesystem::path> label;
};

/// Immutable list of patches sorted by patch_id; patches are read on demand.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::filesystem::path root, DatasetManifest manifest, LoadOptions opts, std::vector<PatchEntry> entries)
      : root_(std::move(root)), manifest_(std::move(manifest)), opts_(std::move(opts)), entries_(std::move(entries)) {}

  const std::filesystem::path& root() const { return root_; }
  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<PatchEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Patch load(std::size_t i) const {
    const PatchEntry& e = entries_.at(i);
    Patch p;
    p.meta = read_meta(e.meta);
    p.image = read_image(e.image);
    if (opts_.expected_bands > 0 && p.image.bands != static_cast<std::size_t>(opts_.expected_bands)) {
      throw DataError("patch " + e.patch_id + " has " + std::to_string(p.image.bands) + " bands, expected " +
                      std::to_string(opts_.expected_bands));
    }
    for (float v : p.image.values) {
      if (!std::isfinite(v)) throw DataError("patch " + e.patch_id + " has non-finite pixel values");
    }
    if (e.label) {
      p.label = read_mask(*e.label);
      if (p.label->height != p.image.height || p.label->width != p.image.width) {
        throw DataError("patch " + e.patch_id + ": label and image sizes differ");
      }
      remap_and_check(*p.label, e.patch_id);
    }
    return p;
  }

  std::vector<Patch> load_all() const {
    std::vector<Patch> out;
    out.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) out.push_back(load(i));
    return out;
  }

  void remap_and_check(LabelMap& label, const std::string& patch_id) const {
    const int classes = opts_.num_classes;
    for (auto& v : label.entries) {
      if (opts_.remap_above >= 0 && v > opts_.remap_above) v = classes > 0 ? classes : opts_.remap_above + 1;
      if (v < 0 || (classes > 0 && v > classes)) {
        throw DataError("patch " + patch_id + " has label " + std::to_string(v) + " outside [0, " +
                        std::to_string(classes) + "]");
      }
    }
  }

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  LoadOptions opts_;
  std::vector<PatchEntry> entries_;
};

inline Dataset load_dataset(const std::filesystem::path& root, LoadOptions opts = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  const auto found = read_manifest(root);
  DatasetManifest manifest = found.value_or(DatasetManifest{});
  if (found && opts.expected_bands == 0) opts.expected_bands = manifest.bands;
  if (opts.num_classes == 0) opts.num_classes = manifest.num_classes;

  std::vector<std::string> domains = opts.domains;
  if (domains.empty()) {
    for (const auto& d : fs::directory_iterator(root)) {
      if (d.is_directory() && d.path().filename() != kEvalLabelsDir) domains.push_back(d.path().filename().string());
    }
    std::sort(domains.begin(), domains.end());
  }

  std::vector<PatchEntry> entries;
  for (const auto& domain : domains) {
    const fs::path dir = root / domain;
    if (!fs::is_directory(dir)) throw DataError("domain directory missing: " + dir.string());
    std::map<std::string, PatchEntry> by_id;
    if (fs::is_directory(dir / "img")) {
      for (const auto& f : fs::directory_iterator(dir / "img")) {
        if (f.path().extension() != ".bin") continue;
        const std::string id = f.path().stem().string();
        PatchEntry e{id, domain, f.path(), dir / "meta" / (id + ".txt"), std::nullopt};
        if (!fs::exists(e.meta)) throw DataError("missing metadata for patch " + id + " (" + e.meta.string() + ")");
        const fs::path mask = dir / "msk" / (id + ".bin");
        if (fs::exists(mask)) e.label = mask;
        by_id.emplace(id, std::move(e));
      }
    }
    if (fs::is_directory(dir / "meta")) {
      for (const auto& f : fs::directory_iterator(dir / "meta")) {
        if (f.path().extension() == ".txt" && !by_id.count(f.path().stem().string())) {
          throw DataError("metadata without image for patch " + f.path().stem().string());
        }
      }
    }
    for (auto& [id, e] : by_id) entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(),
            [](const PatchEntry& a, const PatchEntry& b) { return a.patch_id < b.patch_id; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].patch_id == entries[i - 1].patch_id) {
      throw DataError("duplicate patch id " + entries[i].patch_id);
    }
  }
  return Dataset(root, std::move(manifest), std::move(opts), std::move(entries));
}

/// Held-out labels for evaluation only.
inline LabelMap load_eval_label(const std::filesystem::path& labels_dir, const std::string& patch_id) {
  const auto path = labels_dir / (patch_id + ".bin");
  if (!std::filesystem::exists(path)) throw DataError("missing evaluation label for patch " + patch_id);
  return read_mask(path);
}

}  // namespace geomt
