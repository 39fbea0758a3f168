#pragma once

#include "suq/tensor_ops.hpp"

#include <Eigen/Dense>

#include <vector>

namespace suq {

/// Half-channel profiles in wall units, node 0 at the wall and the last node
/// on the centerline.
struct ChannelState {
  double re_tau{0};
  Eigen::VectorXd y_plus;
  Eigen::VectorXd u_plus;
  Eigen::VectorXd k_plus;
  Eigen::VectorXd omega_plus;
  Eigen::VectorXd nu_t_plus;
  Eigen::VectorXd dudy;  // dU+/dy+ at nodes
  std::vector<Stress> tau;  // stress the momentum equation saw, per node
  // Turbulent shear -uv at each face (size n-1), as the momentum solve used it.
  Eigen::VectorXd face_turb_shear;

  std::vector<double> residual_history;
  int iterations{0};
  bool converged{false};
  // Injected stresses failing is_realizable, summed over all iterations.
  long realizability_violations{0};

  Eigen::Index size() const { return y_plus.size(); }
};

}  // namespace suq
