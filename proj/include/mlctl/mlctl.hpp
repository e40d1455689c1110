#pragma once

#include "errors.hpp"
#include "lti.hpp"
#include "pwl.hpp"
#include "quadrature.hpp"
#include "dual.hpp"
#include "extract.hpp"
#include "fenchel.hpp"
#include "solvable.hpp"
