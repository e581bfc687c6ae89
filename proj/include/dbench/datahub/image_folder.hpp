#pragma once

// Image-folder loaders (class-per-directory layouts). Including this header
// registers the loader with load_dataset(); requires OpenCV.

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "dbench/datahub/dataset.hpp"
#include "dbench/datahub/distilled.hpp"

namespace dbench::datahub {

namespace detail {

// Decodes, resizes the short side to `res` and centre-crops to res x res.
inline void decode_into(const fs::path& file, int res, std::vector<std::uint8_t>& out) {
  cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
  require(!img.empty(), ErrorKind::integrity, "cannot decode image: " + file.string());
  const double scale = double(res) / std::min(img.rows, img.cols);
  cv::Mat resized;
  cv::resize(img, resized, cv::Size(std::max(res, int(std::lround(img.cols * scale))),
                                    std::max(res, int(std::lround(img.rows * scale)))),
             0, 0, cv::INTER_AREA);
  const int y0 = (resized.rows - res) / 2, x0 = (resized.cols - res) / 2;
  cv::Mat crop = resized(cv::Rect(x0, y0, res, res));
  // BGR interleaved -> RGB planar.
  const std::size_t base = out.size();
  out.resize(base + std::size_t(3) * res * res);
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      const auto& p = crop.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) out[base + (std::size_t(c) * res + i) * res + j] = p[2 - c];
    }
}

inline bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
  return ext == ".jpeg" || ext == ".jpg" || ext == ".png" || ext == ".bmp";
}

inline std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::missing_input, "missing directory: " + dir.string());
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline ImageSet load_class_folders(const fs::path& dir, const std::map<std::string, int>& classes, int res,
                                   const std::string& images_subdir = "") {
  ImageSet set;
  set.shape = Shape{0, 3, res, res};
  for (const auto& [wnid, label] : classes) {
    fs::path cdir = dir / wnid;
    if (!images_subdir.empty()) cdir /= images_subdir;
    if (!fs::exists(cdir)) continue;
    for (const auto& f : sorted_files(cdir)) {
      decode_into(f, res, set.pixels);
      set.labels.push_back(label);
      ++set.shape.n;
    }
  }
  return set;
}

inline LoadedDataset load_tiny(const DatasetSpec& spec, const fs::path& root) {
  const fs::path base = first_existing(root, {"tiny-imagenet-200", "tinyimagenet"});
  std::map<std::string, int> classes;
  {
    const auto names = sorted_subdirs(base / "train");
    for (std::size_t i = 0; i < names.size(); ++i) classes[names[i]] = int(i);
  }
  LoadedDataset d{spec, load_class_folders(base / "train", classes, spec.resolution, "images"), {}};
  d.test.shape = Shape{0, 3, spec.resolution, spec.resolution};
  std::ifstream ann(base / "val" / "val_annotations.txt");
  require(bool(ann), ErrorKind::missing_input, "missing " + (base / "val" / "val_annotations.txt").string());
  std::vector<std::pair<std::string, int>> rows;
  std::string line;
  while (std::getline(ann, line)) {
    std::istringstream ss(line);
    std::string file, wnid;
    ss >> file >> wnid;
    const auto it = classes.find(wnid);
    require(it != classes.end(), ErrorKind::integrity, "unknown class " + wnid + " in val annotations");
    rows.emplace_back(file, it->second);
  }
  std::sort(rows.begin(), rows.end());
  for (const auto& [file, label] : rows) {
    decode_into(base / "val" / "images" / file, spec.resolution, d.test.pixels);
    d.test.labels.push_back(label);
    ++d.test.shape.n;
  }
  return d;
}

inline LoadedDataset load_imagenet_style(const DatasetSpec& spec, const fs::path& root) {
  const std::string variant = spec.name == "imagenet1k" ? "imagenet" : spec.name;
  fs::path base = root;
  for (const auto& cand : {root / spec.name, root / variant, root / (variant + "2"), root / (variant + "2-320")})
    if (fs::exists(cand / "train")) base = cand;
  const auto names = sorted_subdirs(base / "train");
  std::map<std::string, int> classes;
  for (std::size_t i = 0; i < names.size(); ++i) classes[names[i]] = int(i);
  require(int(classes.size()) == spec.num_classes, ErrorKind::integrity,
          spec.name + ": found " + std::to_string(classes.size()) + " class folders under " +
              (base / "train").string());
  return LoadedDataset{spec, load_class_folders(base / "train", classes, spec.resolution),
                       load_class_folders(base / "val", classes, spec.resolution)};
}

inline LoadedDataset load_folder_dataset(const DatasetSpec& spec, const fs::path& root) {
  if (spec.name == "tinyimagenet") return load_tiny(spec, root);
  return load_imagenet_style(spec, root);
}

// Lossless 8/16-bit PNG payloads written by external generators.
inline std::vector<float> decode_png(const fs::path& path, int& c, int& h, int& w) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!img.empty(), ErrorKind::integrity, "cannot decode payload: " + path.string());
  c = img.channels();
  h = img.rows;
  w = img.cols;
  const double scale = img.depth() == CV_16U ? 65535.0 : 255.0;
  cv::Mat f;
  img.convertTo(f, CV_32F, 1.0 / scale);
  std::vector<float> chw(std::size_t(c) * h * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) {
        const float v = f.ptr<float>(i)[j * c + k];
        const int rgb = c == 3 ? 2 - k : k;  // BGR -> RGB
        chw[(std::size_t(rgb) * h + i) * w + j] = v;
      }
  return chw;
}

inline const bool kFolderLoaderInstalled = [] {
  folder_loader() = &load_folder_dataset;
  png_decoder() = &decode_png;
  return true;
}();

}  // namespace detail

}  // namespace dbench::datahub
