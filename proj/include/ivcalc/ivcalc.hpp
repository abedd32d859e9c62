#pragma once

#include "ivcalc/error.hpp"
#include "ivcalc/linalg.hpp"
#include "ivcalc/random.hpp"
#include "ivcalc/distributions.hpp"
#include "ivcalc/pairs.hpp"
#include "ivcalc/dataset.hpp"
#include "ivcalc/scm.hpp"
#include "ivcalc/scenarios.hpp"
#include "ivcalc/estimate.hpp"
#include "ivcalc/npreg.hpp"
#include "ivcalc/discrete_iv.hpp"
#include "ivcalc/smooth_iv.hpp"
#include "ivcalc/continuous_iv.hpp"
#include "ivcalc/study.hpp"
