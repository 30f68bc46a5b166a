#include "smg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>
#include <opencv2/core.hpp>
#include <opencv2/freetype.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "smg/error.hpp"

namespace smg::imageio {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return bytes;
}

float to_unit(std::uint8_t p) { return 2.0f * (static_cast<float>(p) / 255.0f) - 1.0f; }

std::uint8_t to_byte(float v) {
  const float clamped = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(255.0 * (clamped + 1.0) / 2.0));
}

/// 8-bit single-channel raster with ink = 255 mapped to +1.
ImageGrid from_gray(const cv::Mat& gray, GridTag tag, bool invert) {
  ImageGrid g;
  g.height = gray.rows;
  g.width = gray.cols;
  g.channels = 1;
  g.tag = tag;
  g.values.resize(g.pixels());
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) {
      const float v = to_unit(row[x]);
      g.at(0, y, x) = invert ? -v : v;
    }
  }
  return g;
}

ImageGrid from_mat(const cv::Mat& decoded, GridTag tag, bool invert) {
  if (decoded.empty() || decoded.rows == 0 || decoded.cols == 0) throw FormatError("image has zero dimensions");
  if (tag_channels(tag) == 1) {
    cv::Mat gray;
    if (decoded.channels() == 1) {
      gray = decoded;
    } else {
      cv::cvtColor(decoded, gray, decoded.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
    }
    return from_gray(gray, tag, invert);
  }
  cv::Mat rgb;
  if (decoded.channels() == 1) {
    cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB);
  } else {
    cv::cvtColor(decoded, rgb, decoded.channels() == 4 ? cv::COLOR_BGRA2RGB : cv::COLOR_BGR2RGB);
  }
  ImageGrid g;
  g.height = rgb.rows;
  g.width = rgb.cols;
  g.channels = 3;
  g.tag = tag;
  g.values.resize(3 * g.pixels());
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      for (int c = 0; c < 3; ++c) g.at(c, y, x) = to_unit(row[x][c]);
    }
  }
  return g;
}

cv::Mat to_mat(const ImageGrid& grid) {
  if (grid.channels == 1) {
    cv::Mat m(grid.height, grid.width, CV_8UC1);
    for (int y = 0; y < grid.height; ++y)
      for (int x = 0; x < grid.width; ++x) m.at<std::uint8_t>(y, x) = to_byte(grid.at(0, y, x));
    return m;
  }
  if (grid.channels != 3) throw ArgumentError("cannot encode grid with " + std::to_string(grid.channels) + " channels");
  cv::Mat m(grid.height, grid.width, CV_8UC3);
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      // OpenCV stores BGR.
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(to_byte(grid.at(2, y, x)), to_byte(grid.at(1, y, x)), to_byte(grid.at(0, y, x)));
    }
  return m;
}

/// Splits a UTF-8 string into code-point substrings.
std::vector<std::string> utf8_glyphs(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, s.size() - i);
    std::string g = s.substr(i, len);
    if (g != " " && g != "\n" && g != "\t") out.push_back(std::move(g));
    i += len;
  }
  return out;
}

std::vector<std::filesystem::path> find_fonts(const std::vector<std::filesystem::path>& dirs) {
  std::vector<std::filesystem::path> fonts;
  for (const auto& dir : dirs) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) continue;
    for (auto it = std::filesystem::recursive_directory_iterator(dir, ec);
         !ec && it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
      if (!it->is_regular_file()) continue;
      auto ext = it->path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".ttf" || ext == ".otf") fonts.push_back(it->path());
    }
  }
  std::sort(fonts.begin(), fonts.end());
  return fonts;
}

class GlyphRenderer {
 public:
  GlyphRenderer(const TextDatasetOptions& opt) : size_(opt.size), glyphs_(utf8_glyphs(opt.glyph_set)) {
    procedural_ = opt.procedural || glyphs_.empty();
    if (procedural_) return;
    for (const auto& path : find_fonts(opt.font_dirs)) {
      try {
        auto ft = cv::freetype::createFreeType2();
        ft->loadFontData(path.string(), 0);
        faces_.push_back(std::move(ft));
      } catch (const cv::Exception&) {
        // Unreadable font files are skipped.
      }
    }
  }

  cv::Mat render(Rng& rng) const {
    cv::Mat img(size_, size_, CV_8UC1, cv::Scalar(0));
    if (procedural_) {
      strokes(img, rng);
    } else if (!faces_.empty()) {
      truetype(img, rng);
    } else {
      hershey(img, rng);
    }
    return img;
  }

 private:
  int uniform_int(Rng& rng, int lo, int hi) const { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double uniform(Rng& rng, double lo, double hi) const { return std::uniform_real_distribution<double>(lo, hi)(rng); }

  const std::string& pick_glyph(Rng& rng) const {
    return glyphs_[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(glyphs_.size()) - 1))];
  }

  void truetype(cv::Mat& img, Rng& rng) const {
    const auto& face = faces_[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(faces_.size()) - 1))];
    const std::string& text = pick_glyph(rng);
    const int height = static_cast<int>(size_ * uniform(rng, 0.45, 0.85));
    int baseline = 0;
    const cv::Size box = face->getTextSize(text, height, -1, &baseline);
    const int x = uniform_int(rng, std::min(0, size_ - box.width), std::max(0, size_ - box.width));
    const int y = uniform_int(rng, std::min(box.height, size_), std::max(box.height, size_ - baseline));
    // The FreeType backend only draws onto 3-channel canvases.
    cv::Mat canvas(size_, size_, CV_8UC3, cv::Scalar::all(0));
    face->putText(canvas, text, cv::Point(x, y), height, cv::Scalar::all(255), -1, cv::LINE_AA, true);
    cv::cvtColor(canvas, img, cv::COLOR_BGR2GRAY);
  }

  void hershey(cv::Mat& img, Rng& rng) const {
    static constexpr int kFaces[] = {cv::FONT_HERSHEY_SIMPLEX, cv::FONT_HERSHEY_DUPLEX, cv::FONT_HERSHEY_COMPLEX,
                                     cv::FONT_HERSHEY_TRIPLEX};
    const int face = kFaces[uniform_int(rng, 0, 3)];
    std::string text = pick_glyph(rng);
    if (static_cast<unsigned char>(text[0]) >= 0x80) text = "A";  // Hershey covers ASCII only.
    const int thickness = std::max(1, static_cast<int>(size_ * uniform(rng, 0.04, 0.09)));
    const double target = size_ * uniform(rng, 0.45, 0.8);
    int baseline = 0;
    const cv::Size unit = cv::getTextSize(text, face, 1.0, thickness, &baseline);
    const double scale = target / std::max(1, unit.height);
    const cv::Size box = cv::getTextSize(text, face, scale, thickness, &baseline);
    const int x = uniform_int(rng, std::min(0, size_ - box.width), std::max(0, size_ - box.width));
    const int y = uniform_int(rng, std::min(box.height, size_ - 1), std::max(box.height, size_ - baseline));
    cv::putText(img, text, cv::Point(x, y), face, scale, cv::Scalar(255), thickness, cv::LINE_AA);
  }

  void strokes(cv::Mat& img, Rng& rng) const {
    const int n = uniform_int(rng, 2, 4);
    for (int s = 0; s < n; ++s) {
      const int thickness = std::max(1, static_cast<int>(size_ * uniform(rng, 0.05, 0.12)));
      if (uniform(rng, 0.0, 1.0) < 0.3) {
        const cv::Point c(uniform_int(rng, size_ / 4, 3 * size_ / 4), uniform_int(rng, size_ / 4, 3 * size_ / 4));
        const cv::Size axes(uniform_int(rng, size_ / 10, size_ / 3), uniform_int(rng, size_ / 10, size_ / 3));
        const double start = uniform(rng, 0.0, 360.0);
        cv::ellipse(img, c, axes, uniform(rng, 0.0, 180.0), start, start + uniform(rng, 90.0, 300.0),
                    cv::Scalar(255), thickness, cv::LINE_AA);
      } else {
        std::vector<cv::Point> pts;
        const int k = uniform_int(rng, 2, 4);
        for (int i = 0; i < k; ++i) {
          pts.emplace_back(uniform_int(rng, size_ / 8, 7 * size_ / 8), uniform_int(rng, size_ / 8, 7 * size_ / 8));
        }
        cv::polylines(img, pts, false, cv::Scalar(255), thickness, cv::LINE_AA);
      }
    }
  }

  int size_;
  std::vector<std::string> glyphs_;
  bool procedural_ = false;
  std::vector<cv::Ptr<cv::freetype::FreeType2>> faces_;
};

}  // namespace

const char* tag_name(GridTag tag) noexcept {
  switch (tag) {
    case GridTag::style: return "style";
    case GridTag::structure: return "structure";
    case GridTag::text: return "text";
    case GridTag::output: return "output";
  }
  return "unknown";
}

int tag_channels(GridTag tag) noexcept { return tag == GridTag::structure || tag == GridTag::text ? 1 : 3; }

ImageGrid ImageGrid::filled(int height, int width, GridTag tag, float value) {
  if (height <= 0 || width <= 0) throw ArgumentError("grid dimensions must be positive");
  ImageGrid g;
  g.height = height;
  g.width = width;
  g.channels = tag_channels(tag);
  g.tag = tag;
  g.values.assign(static_cast<std::size_t>(g.channels) * g.pixels(), value);
  return g;
}

void ImageGrid::validate() const {
  if (height <= 0 || width <= 0) throw ArgumentError("grid has zero dimensions");
  if (channels != tag_channels(tag)) {
    throw ArgumentError(std::string(tag_name(tag)) + " grid must have " + std::to_string(tag_channels(tag)) +
                        " channel(s), got " + std::to_string(channels));
  }
  if (values.size() != static_cast<std::size_t>(channels) * pixels()) throw ArgumentError("grid value count mismatch");
  for (float v : values) {
    if (!(v >= -1.0f && v <= 1.0f)) throw ArgumentError("grid value outside [-1, 1]");
  }
}

ImageGrid load_image(const std::filesystem::path& path, GridTag tag, bool invert) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes, tag, invert);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ImageGrid decode_image(std::span<const std::uint8_t> bytes, GridTag tag, bool invert) {
  if (bytes.empty()) throw FormatError("empty image data");
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(raw, tag_channels(tag) == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw FormatError(std::string("cannot decode image: ") + e.what());
  }
  if (decoded.empty()) throw FormatError("cannot decode image (not a PNG/JPEG or zero-sized)");
  return from_mat(decoded, tag, invert);
}

std::vector<std::uint8_t> encode_png(const ImageGrid& grid) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_mat(grid), out)) throw IoError("PNG encoding failed");
  return out;
}

void save_png(const ImageGrid& grid, const std::filesystem::path& path) {
  const auto bytes = encode_png(grid);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

StyleAsset StyleAsset::make(std::string name, ImageGrid style, ImageGrid structure, double legibility_weight) {
  if (style.channels != 3) throw ArgumentError("style image must have 3 channels");
  if (structure.channels != 1) throw ArgumentError("structure map must have 1 channel");
  if (style.height != structure.height || style.width != structure.width) {
    throw ShapeError("style image and structure map differ in size");
  }
  if (!(legibility_weight >= 0.0)) throw ArgumentError("legibility weight must be nonnegative");
  style.tag = GridTag::style;
  structure.tag = GridTag::structure;
  return StyleAsset{std::move(name), std::move(style), std::move(structure), legibility_weight};
}

ImageGrid crop(const ImageGrid& grid, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > grid.height || left + width > grid.width) {
    throw ArgumentError("crop window outside image");
  }
  ImageGrid out;
  out.height = height;
  out.width = width;
  out.channels = grid.channels;
  out.tag = grid.tag;
  out.values.resize(static_cast<std::size_t>(out.channels) * out.pixels());
  for (int c = 0; c < grid.channels; ++c)
    for (int y = 0; y < height; ++y) {
      const float* src = &grid.values[(static_cast<std::size_t>(c) * grid.height + top + y) * grid.width + left];
      std::copy(src, src + width, &out.at(c, y, 0));
    }
  return out;
}

std::pair<ImageGrid, ImageGrid> random_crop_pair(const ImageGrid& a, const ImageGrid& b, int size, Rng& rng) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("random_crop_pair: images differ in size");
  if (size <= 0 || size > std::min(a.height, a.width)) {
    throw ArgumentError("crop size " + std::to_string(size) + " exceeds image " + std::to_string(a.height) + "x" +
                        std::to_string(a.width));
  }
  const int top = std::uniform_int_distribution<int>(0, a.height - size)(rng);
  const int left = std::uniform_int_distribution<int>(0, a.width - size)(rng);
  return {crop(a, top, left, size, size), crop(b, top, left, size, size)};
}

ImageGrid inject_noise(const ImageGrid& x, double std_dev, Rng& rng) {
  if (!(std_dev >= 0.0)) throw ArgumentError("noise standard deviation must be nonnegative");
  if (std_dev == 0.0) return x;
  ImageGrid out = x;
  std::normal_distribution<float> noise(0.0f, static_cast<float>(std_dev));
  for (float& v : out.values) v = std::clamp(v + noise(rng), -1.0f, 1.0f);
  return out;
}

bool has_both_classes(const ImageGrid& grid) {
  bool fg = false, bg = false;
  for (float v : grid.values) {
    fg = fg || v > 0.0f;
    bg = bg || v < 0.0f;
    if (fg && bg) return true;
  }
  return false;
}

TextDataset::TextDataset(std::vector<ImageGrid> samples, std::uint64_t seed) : samples_(std::move(samples)), seed_(seed) {
  for (const auto& s : samples_) {
    if (s.channels != 1) throw ArgumentError("text samples must be single-channel");
    if (!has_both_classes(s)) throw ArgumentError("text sample lacks foreground or background pixels");
  }
}

TextDataset build_text_dataset(const TextDatasetOptions& options) {
  if (options.count <= 0) throw ArgumentError("text dataset count must be positive");
  if (options.size < 8) throw ArgumentError("text dataset size must be at least 8");
  const GlyphRenderer renderer(options);
  Rng rng = make_rng(options.seed, "text-dataset");
  std::vector<ImageGrid> samples;
  samples.reserve(static_cast<std::size_t>(options.count));
  while (static_cast<int>(samples.size()) < options.count) {
    ImageGrid g = from_gray(renderer.render(rng), GridTag::text, false);
    if (has_both_classes(g)) samples.push_back(std::move(g));
  }
  return TextDataset(std::move(samples), options.seed);
}

TextDataset load_text_dataset(const std::filesystem::path& dir, int size, bool invert, std::uint64_t seed) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("text directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ImageGrid> samples;
  for (const auto& f : files) {
    const auto bytes = read_file(f);
    const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat gray = cv::imdecode(raw, cv::IMREAD_GRAYSCALE);
    if (gray.empty()) continue;
    if (gray.rows != size || gray.cols != size) cv::resize(gray, gray, cv::Size(size, size), 0, 0, cv::INTER_AREA);
    ImageGrid g = from_gray(gray, GridTag::text, invert);
    if (has_both_classes(g)) samples.push_back(std::move(g));
  }
  if (samples.empty()) throw ArgumentError("no usable text images in " + dir.string());
  return TextDataset(std::move(samples), seed);
}

template <typename T>
Tensor<T> to_tensor(const ImageGrid& grid) {
  std::vector<T> values(grid.values.begin(), grid.values.end());
  return Tensor<T>({1, grid.channels, grid.height, grid.width}, std::move(values));
}

template <typename T>
Tensor<T> to_batch(std::span<const ImageGrid> grids) {
  if (grids.empty()) throw ArgumentError("empty batch");
  const auto& first = grids.front();
  Tensor<T> out({static_cast<int>(grids.size()), first.channels, first.height, first.width});
  std::size_t offset = 0;
  for (const auto& g : grids) {
    if (g.channels != first.channels || g.height != first.height || g.width != first.width) {
      throw ShapeError("batch members differ in shape");
    }
    std::copy(g.values.begin(), g.values.end(), out.data() + offset);
    offset += g.values.size();
  }
  return out;
}

template <typename T>
ImageGrid from_tensor(const Tensor<T>& t, int index, GridTag tag) {
  if (t.rank() != 4 || index < 0 || index >= t.dim(0)) throw ShapeError("from_tensor: bad tensor or index");
  ImageGrid g;
  g.channels = t.dim(1);
  g.height = t.dim(2);
  g.width = t.dim(3);
  g.tag = tag;
  const std::size_t n = static_cast<std::size_t>(g.channels) * g.pixels();
  g.values.resize(n);
  const T* src = t.data() + static_cast<std::size_t>(index) * n;
  for (std::size_t i = 0; i < n; ++i) g.values[i] = std::clamp(static_cast<float>(src[i]), -1.0f, 1.0f);
  return g;
}

template Tensor<float> to_tensor<float>(const ImageGrid&);
template Tensor<double> to_tensor<double>(const ImageGrid&);
template Tensor<float> to_batch<float>(std::span<const ImageGrid>);
template Tensor<double> to_batch<double>(std::span<const ImageGrid>);
template ImageGrid from_tensor<float>(const Tensor<float>&, int, GridTag);
template ImageGrid from_tensor<double>(const Tensor<double>&, int, GridTag);

}  // namespace smg::imageio
