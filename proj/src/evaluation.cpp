#include "roads/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>
#include <stdexcept>

#include "roads/errors.hpp"
#include "roads/ops.hpp"

namespace roads {

namespace {

// scipy-style 'reflect' (half-sample symmetric) index folding.
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

std::vector<double> gaussian_smooth(std::span<const double> values, int height, int width, double sigma) {
  std::vector<double> out(values.begin(), values.end());
  if (sigma <= 0.0) return out;
  const int radius = static_cast<int>(4.0 * sigma + 0.5);
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double total = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= total;
  std::vector<double> tmp(out.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        s += k[static_cast<std::size_t>(d + radius)] * out[static_cast<std::size_t>(y) * width + reflect_index(x + d, width)];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        s += k[static_cast<std::size_t>(d + radius)] * tmp[static_cast<std::size_t>(reflect_index(y + d, height)) * width + x];
      }
      out[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
  return out;
}

std::vector<double> bilinear_resize(std::span<const double> values, int height, int width, int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  auto coord = [](int i, int n_in, int n_out, int& lo, int& hi, double& frac) {
    const double pos = n_out > 1 ? static_cast<double>(i) * (n_in - 1) / (n_out - 1) : 0.0;
    lo = std::min(n_in - 1, static_cast<int>(std::floor(pos)));
    hi = std::min(n_in - 1, lo + 1);
    frac = pos - lo;
  };
  for (int y = 0; y < out_h; ++y) {
    int y0, y1;
    double fy;
    coord(y, height, out_h, y0, y1, fy);
    for (int x = 0; x < out_w; ++x) {
      int x0, x1;
      double fx;
      coord(x, width, out_w, x0, x1, fx);
      auto v = [&](int yy, int xx) { return values[static_cast<std::size_t>(yy) * width + xx]; };
      const double top = (1 - fx) * v(y0, x0) + fx * v(y0, x1);
      const double bottom = (1 - fx) * v(y1, x0) + fx * v(y1, x1);
      out[static_cast<std::size_t>(y) * out_w + x] = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

std::vector<AnomalyMap> anomaly_maps(const FeatureMapSet& teacher, const FeatureMapSet& student, int output_size,
                                     const AnomalyMapOptions& options) {
  if (teacher.size() != student.size() || teacher.size() == 0) {
    throw std::invalid_argument("anomaly_maps: pyramids have different level counts");
  }
  const int batch = teacher.levels.front().dim(0);
  std::vector<AnomalyMap> maps(static_cast<std::size_t>(batch));
  for (AnomalyMap& m : maps) {
    m.height = m.width = output_size;
    m.values.assign(static_cast<std::size_t>(output_size) * output_size, 0.0);
  }
  for (int i = 0; i < teacher.size(); ++i) {
    const Tensor& a = teacher.levels[static_cast<std::size_t>(i)].value();
    const Tensor& b = student.levels[static_cast<std::size_t>(i)].value();
    if (a.shape() != b.shape()) {
      throw std::invalid_argument("anomaly_maps: level " + std::to_string(i + 1) + " shapes differ");
    }
    const Tensor d = ops::cosine_distance(Var(a), Var(b), 1e-8).value();
    const int h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int n = 0; n < batch; ++n) {
      const std::span<const double> level(d.ptr() + n * plane, plane);
      const std::vector<double> up = bilinear_resize(level, h, w, output_size, output_size);
      std::vector<double>& acc = maps[static_cast<std::size_t>(n)].values;
      for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += up[p];
    }
  }
  for (AnomalyMap& m : maps) {
    m.values = gaussian_smooth(m.values, m.height, m.width, options.sigma);
    m.image_score = *std::max_element(m.values.begin(), m.values.end());
  }
  return maps;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0.0, rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positives += 1.0;
        rank_sum += avg_rank;
      } else if (labels[order[k]] != 0) {
        throw std::invalid_argument("auroc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) throw std::invalid_argument("auroc: both classes must be present");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

std::vector<int> label_components(const Mask& mask, int& count) {
  std::vector<int> labels(mask.data.size(), 0);
  count = 0;
  std::vector<int> stack;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * mask.width + x;
      if (!mask.data[p] || labels[p]) continue;
      ++count;
      labels[p] = count;
      stack.assign(1, static_cast<int>(p));
      while (!stack.empty()) {
        const int q = stack.back();
        stack.pop_back();
        const int qy = q / mask.width, qx = q % mask.width;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = qy + dy, nx = qx + dx;
            if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
            const std::size_t r = static_cast<std::size_t>(ny) * mask.width + nx;
            if (mask.data[r] && !labels[r]) {
              labels[r] = count;
              stack.push_back(static_cast<int>(r));
            }
          }
        }
      }
    }
  }
  return labels;
}

double aupro(std::span<const AnomalyMap> maps, std::span<const Mask> masks, const AuproOptions& options) {
  if (maps.size() != masks.size() || maps.empty()) throw std::invalid_argument("aupro: maps and masks must align");
  if (!(options.fpr_limit > 0.0 && options.fpr_limit <= 1.0)) throw std::invalid_argument("aupro: fpr_limit in (0, 1]");
  struct Pixel {
    double score;
    int component;  // -1 for background
  };
  std::vector<Pixel> pixels;
  std::vector<double> component_size;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const AnomalyMap& m = maps[i];
    if (m.height != masks[i].height || m.width != masks[i].width) throw std::invalid_argument("aupro: map/mask size mismatch");
    int count = 0;
    const std::vector<int> labels = label_components(masks[i], count);
    const int base = static_cast<int>(component_size.size());
    component_size.resize(component_size.size() + static_cast<std::size_t>(count), 0.0);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      const int c = labels[p] ? base + labels[p] - 1 : -1;
      if (c >= 0) component_size[static_cast<std::size_t>(c)] += 1.0;
      pixels.push_back({m.values[p], c});
    }
  }
  if (component_size.empty()) throw std::invalid_argument("aupro: no anomalous regions in the mask set");
  const double n_components = static_cast<double>(component_size.size());
  double background = 0.0;
  for (const Pixel& px : pixels) background += px.component < 0;
  if (background == 0.0) throw std::invalid_argument("aupro: no background pixels");

  std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

  // Exact curve: one point per distinct score, thresholds descending (detect score >= t).
  std::vector<double> thresholds, fprs, pros;
  double fp = 0.0, pro_sum = 0.0;
  std::size_t i = 0;
  while (i < pixels.size()) {
    std::size_t j = i;
    while (j < pixels.size() && pixels[j].score == pixels[i].score) {
      if (pixels[j].component < 0) {
        fp += 1.0;
      } else {
        pro_sum += 1.0 / component_size[static_cast<std::size_t>(pixels[j].component)];
      }
      ++j;
    }
    thresholds.push_back(pixels[i].score);
    fprs.push_back(fp / background);
    pros.push_back(pro_sum / n_components);
    i = j;
  }

  std::vector<double> xs{0.0}, ys{0.0};
  if (thresholds.size() <= options.max_thresholds) {
    xs.insert(xs.end(), fprs.begin(), fprs.end());
    ys.insert(ys.end(), pros.begin(), pros.end());
  } else {
    // Quantile thresholds of the pixel-score distribution, evaluated on the exact curve.
    const std::size_t k = options.max_thresholds;
    std::vector<double> chosen(k);
    for (std::size_t q = 0; q < k; ++q) {
      chosen[q] = pixels[(q * (pixels.size() - 1)) / (k - 1)].score;
    }
    std::size_t c = 0;
    for (std::size_t t = 0; t < thresholds.size() && c < k; ++t) {
      if (thresholds[t] != chosen[c]) continue;
      xs.push_back(fprs[t]);
      ys.push_back(pros[t]);
      while (c < k && chosen[c] == thresholds[t]) ++c;
    }
  }
  xs.push_back(1.0);
  ys.push_back(1.0);

  const double limit = options.fpr_limit;
  double area = 0.0;
  for (std::size_t s = 1; s < xs.size(); ++s) {
    const double x0 = xs[s - 1], x1 = xs[s];
    if (x0 >= limit) break;
    if (x1 <= limit) {
      area += 0.5 * (x1 - x0) * (ys[s - 1] + ys[s]);
    } else {
      const double y_at = ys[s - 1] + (ys[s] - ys[s - 1]) * (limit - x0) / (x1 - x0);
      area += 0.5 * (limit - x0) * (ys[s - 1] + y_at);
      break;
    }
  }
  return area / limit;
}

nlohmann::json EvalReport::to_json() const {
  auto metrics = [](const ClassMetrics& m) {
    return nlohmann::json{{"name", m.name}, {"i_auroc", m.i_auroc}, {"p_auroc", m.p_auroc},
                          {"p_aupro", m.p_aupro}, {"n_images", m.n_images}};
  };
  nlohmann::json per_class = nlohmann::json::array();
  for (const ClassMetrics& m : classes) per_class.push_back(metrics(m));
  nlohmann::json out{{"condition", condition}, {"classes", per_class}, {"aggregate", metrics(aggregate)}};
  if (class_accuracy >= 0.0) out["class_accuracy"] = class_accuracy;
  return out;
}

std::string EvalReport::scores_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "condition,class,name,defect,label,score,predicted_class\n";
  for (const SampleScore& s : samples) {
    os << condition << ',' << s.class_name << ',' << s.name << ',' << s.defect << ',' << s.label << ',' << s.score << ','
       << s.predicted_class << '\n';
  }
  return os.str();
}

std::string condition_name(const std::optional<CorruptionSpec>& corruption) {
  if (!corruption) return "id";
  return to_string(corruption->kind) + "@" + std::to_string(corruption->severity);
}

std::uint64_t test_sample_seed(std::uint64_t base, std::uint64_t k) { return mix_seed(base, k); }

DatasetIndex corrupt_test_split(const DatasetIndex& data, const CorruptionSpec& spec) {
  spec.validate();
  DatasetIndex out;
  out.classes = data.classes;
  std::uint64_t counter = 0;
  for (const SampleRecord& r : data.samples) {
    if (r.split == Split::train) out.samples.push_back(r);
  }
  for (int c = 0; c < data.num_classes(); ++c) {
    for (const SampleRecord* r : data.split(Split::test, c)) {
      SampleRecord copy = *r;
      CorruptionSpec s = spec;
      s.seed = test_sample_seed(spec.seed, counter++);
      copy.image = std::make_shared<const Image>(corrupt(load_sample_image(*r), s));
      if (r->label == 1) {
        copy.mask = std::make_shared<const Mask>(load_sample_mask(*r, copy.image->height, copy.image->width));
      }
      copy.image_path.clear();
      copy.mask_path.clear();
      out.samples.push_back(std::move(copy));
    }
  }
  return out;
}

void save_heatmap(const Image& image, const AnomalyMap& map, const std::filesystem::path& path) {
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = *hi - *lo;
  cv::Mat gray(map.height, map.width, CV_8UC1);
  for (std::size_t p = 0; p < map.values.size(); ++p) {
    const double v = range > 0.0 ? (map.values[p] - *lo) / range : 0.0;
    gray.data[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  const Image resized = resize_image(image, map.height, map.width);
  cv::Mat base(map.height, map.width, CV_8UC3);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        base.at<cv::Vec3b>(y, x)[2 - c] = static_cast<std::uint8_t>(std::lround(std::clamp(resized.at(y, x, std::min(c, resized.channels - 1)), 0.0, 1.0) * 255.0));
      }
    }
  }
  cv::Mat blended;
  cv::addWeighted(base, 0.5, color, 0.5, 0.0, blended);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), blended)) throw DataError("cannot write heatmap " + path.string());
}

EvalReport evaluate(const RoadsModel& model, const DatasetIndex& data, const std::optional<CorruptionSpec>& corruption,
                    const EvalOptions& options) {
  if (data.classes != model.config().classes) {
    throw DataError("checkpoint classes differ from dataset classes (" + std::to_string(model.config().num_classes()) +
                    " vs " + std::to_string(data.num_classes()) + ")");
  }
  if (corruption) corruption->validate();
  const int size = model.config().encoder.input_size;
  EvalReport report;
  report.condition = condition_name(corruption);
  int routed_total = 0, routed_correct = 0;
  std::uint64_t sample_counter = 0;
  for (int c = 0; c < data.num_classes(); ++c) {
    const auto samples = data.split(Split::test, c);
    if (samples.empty()) throw DataError("class " + data.classes[static_cast<std::size_t>(c)] + " has no test samples");
    std::vector<AnomalyMap> maps;
    std::vector<Mask> masks;
    std::vector<double> image_scores;
    std::vector<int> image_labels;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<Image> inputs;
      for (std::size_t k = start; k < end; ++k) {
        Image img = load_sample_image(*samples[k]);
        if (corruption) {
          CorruptionSpec spec = *corruption;
          spec.seed = test_sample_seed(corruption->seed, sample_counter);
          img = corrupt(img, spec);
        }
        ++sample_counter;
        Mask mask = load_sample_mask(*samples[k], img.height, img.width);
        inputs.push_back(resize_image(img, size, size));
        masks.push_back(resize_mask(mask, size, size));
      }
      const ModelOutput out = model.forward(Var(images_to_batch(inputs)));
      std::vector<AnomalyMap> batch_maps = anomaly_maps(out.teacher, out.student, size, options.map);
      for (std::size_t k = start; k < end; ++k) {
        const SampleRecord& r = *samples[k];
        const AnomalyMap& m = batch_maps[k - start];
        const int predicted = out.routed_classes.empty() ? -1 : out.routed_classes[k - start];
        if (predicted >= 0) {
          ++routed_total;
          routed_correct += predicted == c;
        }
        report.samples.push_back({data.classes[static_cast<std::size_t>(c)], r.name, r.defect, r.label, m.image_score, predicted});
        image_scores.push_back(m.image_score);
        image_labels.push_back(r.label);
        if (options.heatmap_dir) {
          save_heatmap(inputs[k - start], m,
                       *options.heatmap_dir / report.condition / data.classes[static_cast<std::size_t>(c)] / r.defect /
                           (r.name + ".png"));
        }
        maps.push_back(m);
      }
    }
    std::vector<double> pixel_scores;
    std::vector<int> pixel_labels;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      pixel_scores.insert(pixel_scores.end(), maps[k].values.begin(), maps[k].values.end());
      for (std::uint8_t v : masks[k].data) pixel_labels.push_back(v ? 1 : 0);
    }
    ClassMetrics cm;
    cm.name = data.classes[static_cast<std::size_t>(c)];
    cm.n_images = static_cast<int>(maps.size());
    cm.i_auroc = auroc(image_scores, image_labels);
    cm.p_auroc = auroc(pixel_scores, pixel_labels);
    cm.p_aupro = aupro(maps, masks, options.pro);
    report.classes.push_back(cm);
  }
  report.aggregate.name = "mean";
  for (const ClassMetrics& m : report.classes) {
    report.aggregate.i_auroc += m.i_auroc;
    report.aggregate.p_auroc += m.p_auroc;
    report.aggregate.p_aupro += m.p_aupro;
    report.aggregate.n_images += m.n_images;
  }
  const double n = static_cast<double>(report.classes.size());
  report.aggregate.i_auroc /= n;
  report.aggregate.p_auroc /= n;
  report.aggregate.p_aupro /= n;
  if (routed_total > 0) report.class_accuracy = static_cast<double>(routed_correct) / routed_total;
  return report;
}

}  // namespace roads
