#include "mcpm/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace mcpm {

namespace {

struct Point {
  int y, x;
};

std::vector<Point> foreground(const BinaryMask& m) {
  std::vector<Point> pts;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.on[static_cast<size_t>(y) * m.w + x]) pts.push_back({y, x});
  return pts;
}

void check_shapes(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (a.h != b.h || a.w != b.w)
    throw config_error(std::string(op) + ": mask shapes differ, " + std::to_string(a.h) + "x" +
                       std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                       std::to_string(b.w));
}

// Largest over a of the distance to the nearest point of b, squared. The
// inner scan stops as soon as some b point is at least as close as the
// current maximum, because then this a point cannot raise it.
double directed_sq(const std::vector<Point>& a, const std::vector<Point>& b) {
  double cmax = 0.0;
  for (const Point& p : a) {
    double cmin = std::numeric_limits<double>::infinity();
    for (const Point& q : b) {
      double dy = p.y - q.y;
      double dx = p.x - q.x;
      double d = dy * dy + dx * dx;
      if (d <= cmax) {
        cmin = -1.0;
        break;
      }
      if (d < cmin) cmin = d;
    }
    if (cmin > cmax) cmax = cmin;
  }
  return cmax;
}

}  // namespace

BinaryMask threshold_mask(const Tensor& scores) {
  const std::vector<int>& s = scores.shape;
  int h = 0, w = 0;
  if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else {
    throw config_error("threshold_mask: want [h,w] or [1,h,w], got " + scores.shape_str());
  }
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.on.resize(static_cast<size_t>(h) * w);
  for (size_t i = 0; i < m.on.size(); ++i) m.on[i] = scores.data[i] > 0.5 ? 1 : 0;
  return m;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  check_shapes(a, b, "iou");
  long long inter = 0, uni = 0;
  for (size_t i = 0; i < a.on.size(); ++i) {
    inter += a.on[i] && b.on[i];
    uni += a.on[i] || b.on[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  check_shapes(a, b, "dice");
  long long inter = 0, total = 0;
  for (size_t i = 0; i < a.on.size(); ++i) {
    inter += a.on[i] && b.on[i];
    total += a.on[i];
    total += b.on[i];
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double hausdorff(const BinaryMask& a, const BinaryMask& b) {
  check_shapes(a, b, "hausdorff");
  std::vector<Point> fa = foreground(a);
  std::vector<Point> fb = foreground(b);
  if (fa.empty() && fb.empty()) return 0.0;
  if (fa.empty() || fb.empty())
    return std::sqrt(static_cast<double>(a.h) * a.h + static_cast<double>(a.w) * a.w);
  return std::sqrt(std::max(directed_sq(fa, fb), directed_sq(fb, fa)));
}

MetricReport evaluate_predictions(std::span<const Tensor> predictions, const Dataset& dataset) {
  if (dataset.samples.empty()) throw config_error("evaluate: dataset is empty");
  if (predictions.size() != dataset.samples.size())
    throw config_error("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                       std::to_string(dataset.samples.size()) + " samples");
  MetricReport r;
  for (size_t i = 0; i < predictions.size(); ++i) {
    BinaryMask pred = threshold_mask(predictions[i]);
    BinaryMask truth = threshold_mask(dataset.samples[i].clean_label);
    r.sample_iou.push_back(iou(pred, truth));
    r.sample_dice.push_back(dice(pred, truth));
    r.sample_hausdorff.push_back(hausdorff(pred, truth));
  }
  double n = static_cast<double>(predictions.size());
  for (double v : r.sample_iou) r.miou += v;
  for (double v : r.sample_dice) r.dice += v;
  for (double v : r.sample_hausdorff) r.hausdorff += v;
  r.miou /= n;
  r.dice /= n;
  r.hausdorff /= n;
  return r;
}

MetricReport evaluate(const SegConfig& cfg, const SegParams& w, const Dataset& dataset) {
  if (cfg.out_channels != 1)
    throw config_error("evaluate: only single-channel outputs are scored, got " +
                       std::to_string(cfg.out_channels));
  if (dataset.samples.empty()) throw config_error("evaluate: dataset is empty");
  std::vector<Tensor> preds;
  preds.reserve(dataset.samples.size());
  for (const Sample& s : dataset.samples) preds.push_back(seg_forward(cfg, w, s.image));
  return evaluate_predictions(preds, dataset);
}

std::string format_compact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string metric_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "sample,iou,dice,hausdorff\n";
  for (size_t i = 0; i < report.sample_iou.size(); ++i) {
    out << i << ',' << format_compact(report.sample_iou[i]) << ','
        << format_compact(report.sample_dice[i]) << ','
        << format_compact(report.sample_hausdorff[i]) << '\n';
  }
  out << "mean," << format_compact(report.miou) << ',' << format_compact(report.dice) << ','
      << format_compact(report.hausdorff) << '\n';
  return out.str();
}

void write_metric_csv(const std::string& path, const MetricReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw runtime_error("cannot open " + path + " for writing");
  out << metric_csv(report);
  if (!out) throw runtime_error("failed writing " + path);
}

}  // namespace mcpm
