#pragma once

#include "regtr/core.hpp"
#include "regtr/subproblem.hpp"
#include "regtr/solvers.hpp"
#include "regtr/fredholm.hpp"
#include "regtr/harness.hpp"
