#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace tnerm {

/// One small area: its unit-level responses and the n_i x p covariate block.
struct Area {
  std::string id;
  Eigen::VectorXd y;
  Eigen::MatrixXd X;

  Eigen::Index size() const { return y.size(); }
  Eigen::VectorXd covariate_mean() const { return X.colwise().mean().transpose(); }
};

/// Unit-level data grouped by area, in a fixed area order.
struct UnitLevelDataset {
  std::vector<Area> areas;
  Eigen::Index p = 0;

  std::size_t m() const { return areas.size(); }
  Eigen::Index total_size() const;
  Eigen::VectorXd stacked_response() const;
  Eigen::MatrixXd stacked_design() const;
  std::size_t find_area(const std::string& id) const;

  /// Shape checks only: non-empty areas, consistent p, finite entries.
  void check_shapes() const;
};

bool operator==(const Area& a, const Area& b);
bool operator==(const UnitLevelDataset& a, const UnitLevelDataset& b);

}  // namespace tnerm
