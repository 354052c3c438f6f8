#include "causalcde/matrix_exp.hpp"

#include <algorithm>
#include <cmath>

namespace causalcde {

namespace {

// Pade approximant of order (m, m) evaluated as p(A)/q(A) with
// q(A) = p(-A). Coefficients from Higham, "The Scaling and Squaring Method
// for the Matrix Exponential Revisited" (2005).
MatrixXd pade13(const MatrixXd& a) {
  static const double b[] = {64764752532480000.0, 32382376266240000.0,
                             7771770303897600.0,  1187353796428800.0,
                             129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,
                             1323241920.0,        40840800.0,
                             960960.0,            16380.0,
                             182.0,               1.0};
  const int n = static_cast<int>(a.rows());
  const MatrixXd ident = MatrixXd::Identity(n, n);
  const MatrixXd a2 = a * a;
  const MatrixXd a4 = a2 * a2;
  const MatrixXd a6 = a4 * a2;
  const MatrixXd u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 +
           b[5] * a4 + b[3] * a2 + b[1] * ident);
  const MatrixXd v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                     b[4] * a4 + b[2] * a2 + b[0] * ident;
  return (v - u).partialPivLu().solve(v + u);
}

}  // namespace

MatrixXd matrix_exp(const MatrixXd& a) {
  if (a.rows() != a.cols()) {
    throw ContractError("matrix_exp: matrix must be square");
  }
  const double theta13 = 5.371920351148152;  // Pade-13 accuracy bound
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();  // 1-norm
  int squarings = 0;
  MatrixXd scaled = a;
  if (norm > theta13) {
    squarings = std::max(0, static_cast<int>(
                                std::ceil(std::log2(norm / theta13))));
    scaled /= std::pow(2.0, squarings);
  }
  MatrixXd result = pade13(scaled);
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

double trace_exp(const MatrixXd& a) { return matrix_exp(a).trace(); }

}  // namespace causalcde
