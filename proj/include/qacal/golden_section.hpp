#ifndef QACAL_GOLDEN_SECTION_HPP
#define QACAL_GOLDEN_SECTION_HPP

#include <cmath>
#include <utility>
#include <vector>

namespace qacal {

struct LineSearchResult {
  double x = 0.0;
  double fx = 0.0;
  std::vector<std::pair<double, double>> trace; // every (x, f(x)) evaluated
};

/// Golden-section minimization of a unimodal f on [lo, hi], stopping once
/// the bracket is narrower than tol. Returns the best evaluated point.
template <typename F>
LineSearchResult golden_section_minimize(F&& f, double lo, double hi, double tol = 1e-4, int max_iterations = 200) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  LineSearchResult out;
  auto eval = [&](double x) {
    double fx = f(x);
    out.trace.emplace_back(x, fx);
    if (out.trace.size() == 1 || fx < out.fx) {
      out.x = x;
      out.fx = fx;
    }
    return fx;
  };

  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = eval(c), fd = eval(d);
  for (int it = 0; it < max_iterations && (b - a) > tol; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(d);
    }
  }
  eval(0.5 * (a + b));
  return out;
}

} // namespace qacal

#endif
