#ifndef SCOREBREAK_TEST_UTIL_HPP
#define SCOREBREAK_TEST_UTIL_HPP

#include <random>

#include "scorebreak/tensor.hpp"

namespace scorebreak::testing {

inline Image random_image(int c, int h, int w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(c, h, w);
  for (double& v : img.values()) v = u(rng);
  return img;
}

inline Image gaussian_image(int c, int h, int w, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  Image img(c, h, w);
  for (double& v : img.values()) v = n(rng);
  return img;
}

inline LabelMap random_labels(int h, int w, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, k - 1);
  LabelMap m(h, w);
  for (int& l : m.labels) l = u(rng);
  return m;
}

}  // namespace scorebreak::testing

#endif
