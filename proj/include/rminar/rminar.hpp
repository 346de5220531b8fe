#pragma once

#include "rminar/errors.hpp"
#include "rminar/numerics.hpp"
#include "rminar/random.hpp"
#include "rminar/distributions.hpp"
#include "rminar/operators.hpp"
#include "rminar/model.hpp"
#include "rminar/theory.hpp"
#include "rminar/estimation.hpp"
#include "rminar/diagnostics.hpp"
#include "rminar/mc_study.hpp"
#include "rminar/io.hpp"
