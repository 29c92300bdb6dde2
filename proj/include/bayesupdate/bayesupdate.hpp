#pragma once

#include "bayesupdate/distributions.hpp"
#include "bayesupdate/errors.hpp"
#include "bayesupdate/experiments.hpp"
#include "bayesupdate/gaussian_bayes.hpp"
#include "bayesupdate/gaussian_core.hpp"
#include "bayesupdate/hmm_core.hpp"
#include "bayesupdate/hmm_update.hpp"
#include "bayesupdate/linalg.hpp"
#include "bayesupdate/parallel.hpp"
