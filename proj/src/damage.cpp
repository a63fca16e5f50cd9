#include "prunekit/damage.hpp"

#include <ostream>
#include <string>

#include <Eigen/QR>

namespace prunekit {

std::string_view to_string(DamageMethod m) {
  switch (m) {
    case DamageMethod::random: return "random";
    case DamageMethod::magnitude: return "magnitude";
    case DamageMethod::obd: return "obd";
    case DamageMethod::obd_sd: return "obd_sd";
    case DamageMethod::lm: return "lm";
  }
  return "?";
}

DamageMethod parse_damage_method(std::string_view name) {
  if (name == "random") return DamageMethod::random;
  if (name == "magnitude") return DamageMethod::magnitude;
  if (name == "obd") return DamageMethod::obd;
  if (name == "obd_sd") return DamageMethod::obd_sd;
  if (name == "lm") return DamageMethod::lm;
  throw SpecError("unknown damage method '" + std::string(name) + "'");
}

void write_damage_csv(std::ostream& out, const DamageReport& report) {
  const bool stats = report.mean_h_theta.size() == report.damage.size();
  out << "layer,row,col,damage,mean,sd\n";
  out.precision(17);
  for (Index i = 0; i < report.damage.size(); ++i) {
    const ParamIndex p = report.layout.locate(i);
    out << p.layer << ',' << p.row << ',' << p.col << ',' << report.damage(i) << ',';
    if (stats) out << report.mean_h_theta(i) << ',' << report.sd_h_theta(i);
    else out << ',';
    out << '\n';
  }
}

void write_neuron_damage_csv(std::ostream& out, const NeuronDamageReport& report) {
  out << "layer,neuron,damage\n";
  out.precision(17);
  for (std::size_t l = 0; l < report.layers.size(); ++l)
    for (Index i = 0; i < report.layers[l].size(); ++i) out << l << ',' << i << ',' << report.layers[l](i) << '\n';
}

Eigen::VectorXd fit_drop_regression(const Eigen::MatrixXd& dropped, const Eigen::VectorXd& losses,
                                    double ridge_lambda) {
  const Index d = dropped.rows(), k = dropped.cols();
  if (losses.size() != d) throw DimensionError("one loss per design row required");
  if (ridge_lambda < 0.0) throw SpecError("ridge_lambda must be >= 0");
  // Penalized least squares as an ordinary one: stack sqrt(lambda) * I under
  // the slope columns, then solve with column-pivoted QR.
  const Index extra = ridge_lambda > 0.0 ? k : 0;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d + extra, k + 1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(d + extra);
  a.col(0).head(d).setOnes();
  a.block(0, 1, d, k) = dropped;
  y.head(d) = losses;
  if (extra > 0) a.block(d, 1, k, k).diagonal().setConstant(std::sqrt(ridge_lambda));

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < k + 1)
    throw NumericalError("drop-regression design is singular; use more rounds or set ridge_lambda > 0");
  return qr.solve(y);
}

}  // namespace prunekit
