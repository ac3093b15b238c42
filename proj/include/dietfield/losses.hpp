#pragma once

#include <map>
#include <string>

#include "dietfield/autodiff.hpp"

namespace dietfield::losses {

// A scalar objective and the values of the terms it is made of.
struct LossValue {
  diff::Var value;
  std::map<std::string, double> breakdown;  // e.g. mse_coarse, mse_fine, sc
};

// Mean over rays of the channel-summed squared error. Both N x 3.
diff::Var mse_rays(diff::Var pred, diff::Var target);
// Same normalization over all pixels of H x W x 3 images.
diff::Var mse_full(diff::Var image, diff::Var target);

// (lambda / 2) ||a - b||^2.
diff::Var sc_l2(diff::Var target, diff::Var rendered, float lambda);
// lambda (1 - a.b) after renormalizing both inputs. Zero vectors are rejected.
diff::Var sc_cosine(diff::Var target, diff::Var rendered, float lambda);

}  // namespace dietfield::losses
