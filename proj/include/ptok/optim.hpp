#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace ptok {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay over a fixed list of matrices. Moment
// buffers are positional: every step must pass the parameters and their
// gradients in registration order.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const std::vector<const Eigen::MatrixXd*>& shapes);

  void step(const std::vector<Eigen::MatrixXd*>& params,
            const std::vector<const Eigen::MatrixXd*>& grads);
  void step(const std::vector<Eigen::MatrixXd*>& params,
            const std::vector<const Eigen::MatrixXd*>& grads, double learning_rate);

  int64_t steps_taken() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Eigen::ArrayXXd> m_, v_;
  int64_t t_ = 0;
};

}  // namespace ptok
