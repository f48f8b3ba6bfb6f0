#include "ptok/optim.hpp"

#include <cmath>

#include "ptok/errors.hpp"

namespace ptok {

AdamW::AdamW(AdamWConfig cfg, const std::vector<const Eigen::MatrixXd*>& shapes) : cfg_(cfg) {
  if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
    throw ConfigError("adam betas must lie in [0, 1)");
  m_.reserve(shapes.size());
  v_.reserve(shapes.size());
  for (const Eigen::MatrixXd* s : shapes) {
    m_.push_back(Eigen::ArrayXXd::Zero(s->rows(), s->cols()));
    v_.push_back(Eigen::ArrayXXd::Zero(s->rows(), s->cols()));
  }
}

void AdamW::step(const std::vector<Eigen::MatrixXd*>& params,
                 const std::vector<const Eigen::MatrixXd*>& grads) {
  step(params, grads, cfg_.learning_rate);
}

void AdamW::step(const std::vector<Eigen::MatrixXd*>& params,
                 const std::vector<const Eigen::MatrixXd*>& grads, double learning_rate) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ComputeError("optimizer step with mismatched parameter list");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Eigen::MatrixXd& p = *params[i];
    const Eigen::MatrixXd& g = *grads[i];
    if (p.rows() != m_[i].rows() || p.cols() != m_[i].cols() || g.rows() != p.rows() ||
        g.cols() != p.cols())
      throw ComputeError("optimizer step with mismatched shapes");
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g.array();
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.array().square();
    const Eigen::ArrayXXd update = (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + cfg_.eps);
    p.array() -= learning_rate * (update + cfg_.weight_decay * p.array());
  }
}

}  // namespace ptok
