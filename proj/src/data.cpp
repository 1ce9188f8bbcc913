#include "ebm/data.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

namespace fs = std::filesystem;

namespace ebm {

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1.0 - s);
  double q = v * (1.0 - f * s);
  double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

bool inside_shape(int kind, double dx, double dy, double r) {
  switch (kind % 4) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::max(std::abs(dx), std::abs(dy)) <= 0.85 * r;
    case 2: {  // triangle, apex up
      if (dy < -r || dy > r) return false;
      double half = (dy + r) * 0.5;
      return std::abs(dx) <= half;
    }
    default:  // cross
      return (std::abs(dx) <= 0.3 * r || std::abs(dy) <= 0.3 * r) &&
             std::abs(dx) <= r && std::abs(dy) <= r;
  }
}

cv::Mat to_mat(const ImageBatch& raw01, long index) {
  if (raw01.c != 3) throw contract_error("PNG export needs 3-channel images");
  cv::Mat img(static_cast<int>(raw01.h), static_cast<int>(raw01.w), CV_8UC3);
  const double* src = raw01.image(index);
  long hw = raw01.h * raw01.w;
  for (long y = 0; y < raw01.h; ++y)
    for (long x = 0; x < raw01.w; ++x) {
      auto& px = img.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (long ch = 0; ch < 3; ++ch) {
        double v = std::clamp(src[ch * hw + y * raw01.w + x], 0.0, 1.0);
        px[static_cast<int>(2 - ch)] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  return img;
}

}  // namespace

ImageBatch ImageBatch::subset(const std::vector<long>& indices) const {
  ImageBatch out;
  out.n = static_cast<long>(indices.size());
  out.c = c;
  out.h = h;
  out.w = w;
  out.data.resize(out.n * image_elems());
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy(image(indices[i]), image(indices[i]) + image_elems(),
              out.data.begin() + static_cast<long>(i) * image_elems());
    if (!labels.empty()) out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

ImageBatch gen_synthetic(const SyntheticSpec& spec, Rng& rng) {
  if (spec.classes < 2 || spec.classes > 8)
    throw contract_error("gen_synthetic: classes must be in [2,8]");
  ImageBatch b;
  b.n = spec.classes * spec.n_per_class;
  b.c = 3;
  b.h = b.w = spec.image_size;
  b.data.resize(b.n * b.image_elems());
  long hw = b.h * b.w;
  long idx = 0;
  for (long cls = 0; cls < spec.classes; ++cls) {
    double class_hue = static_cast<double>(cls) / spec.classes;
    for (long i = 0; i < spec.n_per_class; ++i, ++idx) {
      b.labels.push_back(static_cast<int>(cls));
      double cx = rng.uniform(0.3, 0.7) * b.w;
      double cy = rng.uniform(0.3, 0.7) * b.h;
      double r = rng.uniform(0.18, 0.33) * b.w;
      double fg[3], bg[3];
      hsv_to_rgb(class_hue + rng.uniform(-0.06, 0.06), rng.uniform(0.7, 1.0),
                 rng.uniform(0.7, 1.0), fg);
      hsv_to_rgb(class_hue + 0.5 + rng.uniform(-0.1, 0.1), rng.uniform(0.3, 0.6),
                 rng.uniform(0.35, 0.75), bg);
      double* img = b.image(idx);
      for (long y = 0; y < b.h; ++y)
        for (long x = 0; x < b.w; ++x) {
          bool in = inside_shape(static_cast<int>(cls), x + 0.5 - cx, y + 0.5 - cy, r);
          const double* color = in ? fg : bg;
          for (long ch = 0; ch < 3; ++ch) img[ch * hw + y * b.w + x] = color[ch];
        }
    }
  }
  return b;
}

ChannelStats compute_stats(const ImageBatch& raw01) {
  ChannelStats s;
  s.mean.assign(raw01.c, 0.0);
  s.stddev.assign(raw01.c, 0.0);
  long per = raw01.h * raw01.w;
  long count = raw01.n * per;
  for (long i = 0; i < raw01.n; ++i) {
    const double* img = raw01.image(i);
    for (long ch = 0; ch < raw01.c; ++ch)
      for (long p = 0; p < per; ++p) s.mean[ch] += img[ch * per + p];
  }
  for (long ch = 0; ch < raw01.c; ++ch) s.mean[ch] /= count;
  for (long i = 0; i < raw01.n; ++i) {
    const double* img = raw01.image(i);
    for (long ch = 0; ch < raw01.c; ++ch)
      for (long p = 0; p < per; ++p) {
        double d = img[ch * per + p] - s.mean[ch];
        s.stddev[ch] += d * d;
      }
  }
  for (long ch = 0; ch < raw01.c; ++ch)
    s.stddev[ch] = std::max(std::sqrt(s.stddev[ch] / count), 1e-6);
  return s;
}

ImageBatch normalize(const ImageBatch& raw01, const ChannelStats& stats) {
  ImageBatch out = raw01;
  long per = out.h * out.w;
  for (long i = 0; i < out.n; ++i) {
    double* img = out.image(i);
    for (long ch = 0; ch < out.c; ++ch)
      for (long p = 0; p < per; ++p)
        img[ch * per + p] = (img[ch * per + p] - stats.mean[ch]) / stats.stddev[ch];
  }
  return out;
}

ImageBatch denormalize(const ImageBatch& normed, const ChannelStats& stats) {
  ImageBatch out = normed;
  long per = out.h * out.w;
  for (long i = 0; i < out.n; ++i) {
    double* img = out.image(i);
    for (long ch = 0; ch < out.c; ++ch)
      for (long p = 0; p < per; ++p)
        img[ch * per + p] = img[ch * per + p] * stats.stddev[ch] + stats.mean[ch];
  }
  return out;
}

Tensor to_tensor(const ImageBatch& b) {
  return Tensor::from_data({b.n, b.c, b.h, b.w}, b.data);
}

ImageBatch from_tensor(const Tensor& t, std::vector<int> labels) {
  if (t.dim() != 4) throw contract_error("from_tensor: rank-4 tensor required");
  ImageBatch b;
  b.n = t.shape()[0];
  b.c = t.shape()[1];
  b.h = t.shape()[2];
  b.w = t.shape()[3];
  b.data = t.data();
  b.labels = std::move(labels);
  return b;
}

void save_png(const std::string& path, const ImageBatch& raw01, long index) {
  if (!cv::imwrite(path, to_mat(raw01, index)))
    throw std::runtime_error("save_png: failed to write " + path);
}

void write_dataset_pngs(const std::string& root, const ImageBatch& raw01) {
  for (long i = 0; i < raw01.n; ++i) {
    int cls = raw01.labels.empty() ? 0 : raw01.labels[i];
    fs::path dir = fs::path(root) / ("class_" + std::to_string(cls));
    fs::create_directories(dir);
    save_png((dir / ("img_" + std::to_string(i) + ".png")).string(), raw01, i);
  }
}

ImageBatch load_folder(const std::string& root, long image_size) {
  std::vector<fs::path> class_dirs;
  for (auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind("class_", 0) == 0)
      class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw std::runtime_error("load_folder: no class_* directories under " + root);

  ImageBatch b;
  b.c = 3;
  b.h = b.w = image_size;
  for (size_t cls = 0; cls < class_dirs.size(); ++cls) {
    std::vector<fs::path> files;
    for (auto& e : fs::directory_iterator(class_dirs[cls]))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (auto& f : files) {
      cv::Mat img = cv::imread(f.string(), cv::IMREAD_COLOR);
      if (img.empty()) throw std::runtime_error("load_folder: cannot read " + f.string());
      if (img.rows != image_size || img.cols != image_size) {
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(static_cast<int>(image_size),
                                          static_cast<int>(image_size)),
                   0, 0, cv::INTER_AREA);
        img = resized;
      }
      long hw = image_size * image_size;
      size_t base = b.data.size();
      b.data.resize(base + 3 * hw);
      for (long y = 0; y < image_size; ++y)
        for (long x = 0; x < image_size; ++x) {
          auto px = img.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
          for (long ch = 0; ch < 3; ++ch)
            b.data[base + ch * hw + y * image_size + x] = px[static_cast<int>(2 - ch)] / 255.0;
        }
      b.labels.push_back(static_cast<int>(cls));
      ++b.n;
    }
  }
  return b;
}

void save_triptych_png(const std::string& path, const ImageBatch& corrupted,
                       const ImageBatch& original, const ImageBatch& restored) {
  long n = original.n, h = original.h, w = original.w;
  cv::Mat panel(static_cast<int>(n * h), static_cast<int>(3 * w + 4), CV_8UC3,
                cv::Scalar(255, 255, 255));
  const ImageBatch* cols[3] = {&corrupted, &original, &restored};
  for (long i = 0; i < n; ++i)
    for (int col = 0; col < 3; ++col) {
      cv::Mat cell = to_mat(*cols[col], i);
      cell.copyTo(panel(cv::Rect(static_cast<int>(col * (w + 2)), static_cast<int>(i * h),
                                 static_cast<int>(w), static_cast<int>(h))));
    }
  if (!cv::imwrite(path, panel))
    throw std::runtime_error("save_triptych_png: failed to write " + path);
}

}  // namespace ebm
