#pragma once

// Brute-force reference metrics, written independently of src/evaluation.cpp.

#include <algorithm>
#include <functional>
#include <set>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "roads/evaluation.hpp"

namespace roads::oracle {

// P(score+ > score-) + 0.5 P(tie) over every positive/negative pair.
inline double auroc_all_pairs(std::span<const double> s, std::span<const int> l) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != 0) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  if (pairs == 0) throw std::invalid_argument("oracle: need both labels");
  return wins / static_cast<double>(pairs);
}

// Components by recursive flood fill over the 8-neighbourhood.
inline std::vector<std::vector<std::size_t>> components_8(const Mask& m) {
  std::vector<int> seen(m.data.size(), 0);
  std::vector<std::vector<std::size_t>> comps;
  std::function<void(int, int, std::vector<std::size_t>&)> fill = [&](int y, int x, std::vector<std::size_t>& out) {
    if (y < 0 || x < 0 || y >= m.height || x >= m.width) return;
    const std::size_t p = static_cast<std::size_t>(y) * m.width + x;
    if (!m.data[p] || seen[p]) return;
    seen[p] = 1;
    out.push_back(p);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dy || dx) fill(y + dy, x + dx, out);
      }
    }
  };
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::vector<std::size_t> c;
      fill(y, x, c);
      if (!c.empty()) comps.push_back(std::move(c));
    }
  }
  return comps;
}

// Every distinct map value is a threshold (detected = value >= t). The curve
// starts at (0, 0); trapezoids up to fpr_limit, interpolated at the limit,
// divided by the limit.
inline double aupro_all_thresholds(std::span<const AnomalyMap> maps, std::span<const Mask> masks, double fpr_limit) {
  std::set<double> distinct;
  long negatives = 0;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    distinct.insert(maps[k].values.begin(), maps[k].values.end());
    for (auto v : masks[k].data) negatives += v == 0;
  }
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> comps;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    for (auto& c : components_8(masks[k])) comps.emplace_back(k, std::move(c));
  }
  if (comps.empty() || negatives == 0) throw std::invalid_argument("oracle: need components and background");
  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
  for (auto it = distinct.rbegin(); it != distinct.rend(); ++it) {
    const double t = *it;
    long fp = 0;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      for (std::size_t p = 0; p < maps[k].values.size(); ++p) fp += !masks[k].data[p] && maps[k].values[p] >= t;
    }
    double pro = 0.0;
    for (const auto& [k, c] : comps) {
      long hit = 0;
      for (std::size_t p : c) hit += maps[k].values[p] >= t;
      pro += static_cast<double>(hit) / static_cast<double>(c.size());
    }
    curve.emplace_back(static_cast<double>(fp) / static_cast<double>(negatives), pro / static_cast<double>(comps.size()));
  }
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto [x0, y0] = curve[i - 1];
    const auto [x1, y1] = curve[i];
    if (x0 >= fpr_limit) break;
    if (x1 <= fpr_limit) {
      area += 0.5 * (x1 - x0) * (y0 + y1);
    } else {
      const double y_at = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
      area += 0.5 * (fpr_limit - x0) * (y0 + y_at);
      break;
    }
  }
  return area / fpr_limit;
}

}  // namespace roads::oracle
