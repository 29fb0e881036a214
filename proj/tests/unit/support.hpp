#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "gkdv/profiles.hpp"

#ifndef GKDV_TEST_DATA
#define GKDV_TEST_DATA "tests/data"
#endif

namespace gkdv::test {

// golden_constants.txt: "name value abs_error" per line
inline const std::map<std::string, double>& golden() {
  static const std::map<std::string, double> table = [] {
    std::map<std::string, double> t;
    std::ifstream in(std::string(GKDV_TEST_DATA) + "/golden_constants.txt");
    if (!in) throw std::runtime_error("golden_constants.txt not found under " GKDV_TEST_DATA);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string name;
      double v = 0.0;
      ss >> name >> v;
      t[name] = v;
    }
    return t;
  }();
  return table;
}

inline double golden(const std::string& name) { return golden().at(name); }

inline double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// One profile set per resolution, shared by the whole binary.
inline const ProfileSet& profiles(Index n = 4096, double L = 25.0) {
  static std::map<std::pair<Index, double>, ProfileSet> cache;
  auto it = cache.find({n, L});
  if (it == cache.end()) it = cache.emplace(std::make_pair(n, L), build_profiles(Grid::bounded(n, L))).first;
  return it->second;
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Sum of a few Gaussians with random centres, widths and signs.
inline Field random_bumps(const Grid& g, Rng& rng, int count = 3, double spread = 5.0) {
  Vector v = Vector::Zero(g.size());
  for (int j = 0; j < count; ++j) {
    const double c = uniform(rng, -spread, spread), w = uniform(rng, 0.5, 2.0), a = uniform(rng, -1.0, 1.0);
    for (Index k = 0; k < g.size(); ++k) {
      const double z = (g.point(k) - c) / w;
      v[k] += a * std::exp(-z * z);
    }
  }
  return {g, v};
}

inline constexpr int kCases = 100;

}  // namespace gkdv::test
