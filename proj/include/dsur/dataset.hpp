#pragma once

#include <string>

#include "dsur/error.hpp"
#include "dsur/tensor.hpp"

namespace dsur {

// Observed functional outputs: responses(h, i) is simulation h at site i.
struct Dataset {
  Tensor sites;            // n x 2
  Tensor fine_covariates;  // n x q
  Tensor inputs;           // H x p
  Tensor responses;        // H x n

  std::size_t n() const noexcept { return sites.rows(); }
  std::size_t sims() const noexcept { return inputs.rows(); }
  std::size_t p() const noexcept { return inputs.cols(); }
  std::size_t q() const noexcept { return fine_covariates.cols(); }
  std::size_t pairs() const noexcept { return n() * sims(); }

  void validate() const {
    if (sites.rank() != 2 || sites.cols() != 2) throw ShapeError("dataset: sites must be n x 2");
    if (fine_covariates.rank() != 2 || fine_covariates.rows() != n())
      throw ShapeError("dataset: fine covariates must have one row per site");
    if (inputs.rank() != 2) throw ShapeError("dataset: inputs must be H x p");
    if (responses.rank() != 2 || responses.rows() != sims() || responses.cols() != n())
      throw ShapeError("dataset: responses must be " + std::to_string(sims()) + " x " +
                       std::to_string(n()) + ", got " + responses.shape_string());
    if (n() == 0 || sims() == 0) throw ShapeError("dataset: empty");
    for (const Tensor* t : {&sites, &fine_covariates, &inputs, &responses})
      if (!t->all_finite()) throw NumericError("dataset: missing or non-finite value");
  }
};

}  // namespace dsur
