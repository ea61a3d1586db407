#include "gapl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gapl {

namespace {
std::atomic<std::uint64_t> g_allocated_elements{0};
}

std::size_t Tensor::checked_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    check_contract(e > 0, "Tensor: extents must be positive");
    n *= e;
  }
  return n;
}

void Tensor::count_allocation(std::size_t elements) {
  g_allocated_elements.fetch_add(elements, std::memory_order_relaxed);
}

void Tensor::reset_allocation_counter() { g_allocated_elements.store(0); }

std::uint64_t Tensor::allocated_elements() {
  return g_allocated_elements.load();
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out << "x";
    out << shape_[i];
  }
  out << "]";
  return out.str();
}

bool near(const Tensor& a, const Tensor& b, double tol) {
  return max_abs_diff(a, b) <= tol;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_contract(a.same_shape(b), "max_abs_diff: shape mismatch " +
                                      a.shape_string() + " vs " +
                                      b.shape_string());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::fabs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace gapl
