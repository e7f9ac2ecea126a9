#include "tnerm/dataset.hpp"

#include "tnerm/error.hpp"

#include <cmath>

namespace tnerm {

Eigen::Index UnitLevelDataset::total_size() const {
  Eigen::Index n = 0;
  for (const auto& a : areas) n += a.size();
  return n;
}

Eigen::VectorXd UnitLevelDataset::stacked_response() const {
  Eigen::VectorXd y(total_size());
  Eigen::Index row = 0;
  for (const auto& a : areas) {
    y.segment(row, a.size()) = a.y;
    row += a.size();
  }
  return y;
}

Eigen::MatrixXd UnitLevelDataset::stacked_design() const {
  Eigen::MatrixXd X(total_size(), p);
  Eigen::Index row = 0;
  for (const auto& a : areas) {
    X.middleRows(row, a.size()) = a.X;
    row += a.size();
  }
  return X;
}

std::size_t UnitLevelDataset::find_area(const std::string& id) const {
  for (std::size_t i = 0; i < areas.size(); ++i)
    if (areas[i].id == id) return i;
  throw InputError("unknown area id '" + id + "'");
}

void UnitLevelDataset::check_shapes() const {
  if (areas.empty()) throw InputError("dataset has no areas");
  if (p <= 0) throw InputError("dataset has no covariates");
  for (const auto& a : areas) {
    if (a.size() == 0) throw InputError("area '" + a.id + "' has no observations");
    if (a.X.rows() != a.size() || a.X.cols() != p)
      throw InputError("area '" + a.id + "' covariate block has the wrong shape");
    if (!a.y.allFinite() || !a.X.allFinite())
      throw InputError("area '" + a.id + "' contains non-finite values");
  }
}

bool operator==(const Area& a, const Area& b) {
  return a.id == b.id && a.y.size() == b.y.size() && a.X.rows() == b.X.rows() &&
         a.X.cols() == b.X.cols() && a.y == b.y && a.X == b.X;
}

bool operator==(const UnitLevelDataset& a, const UnitLevelDataset& b) {
  return a.p == b.p && a.areas == b.areas;
}

}  // namespace tnerm
