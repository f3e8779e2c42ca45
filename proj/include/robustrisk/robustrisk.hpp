#ifndef ROBUSTRISK_ROBUSTRISK_HPP
#define ROBUSTRISK_ROBUSTRISK_HPP

/// Umbrella header: sharp bounds for distortion risk metrics over
/// mean-variance-Wasserstein uncertainty sets, unimodal restrictions, and the
/// induced robust portfolio problems.

#include "robustrisk/common.hpp"
#include "robustrisk/quadrature.hpp"
#include "robustrisk/reference.hpp"
#include "robustrisk/distortion.hpp"
#include "robustrisk/envelope.hpp"
#include "robustrisk/worstcase.hpp"
#include "robustrisk/unimodal.hpp"
#include "robustrisk/portfolio.hpp"

#endif  // ROBUSTRISK_ROBUSTRISK_HPP
