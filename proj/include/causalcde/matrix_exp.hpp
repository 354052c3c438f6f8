#pragma once

#include "causalcde/common.hpp"

namespace causalcde {

// Matrix exponential by Pade-13 approximation with scaling and squaring
// (Higham 2005). Accurate to close to machine precision for any square A.
MatrixXd matrix_exp(const MatrixXd& a);

// Tr(exp(A)).
double trace_exp(const MatrixXd& a);

}  // namespace causalcde
