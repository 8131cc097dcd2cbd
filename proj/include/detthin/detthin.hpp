#ifndef DETTHIN_DETTHIN_HPP
#define DETTHIN_DETTHIN_HPP

#include "detthin/error.hpp"
#include "detthin/random.hpp"
#include "detthin/kernels.hpp"
#include "detthin/geometry.hpp"
#include "detthin/model.hpp"
#include "detthin/processes.hpp"
#include "detthin/estimators.hpp"
#include "detthin/fitting.hpp"
#include "detthin/io.hpp"

#endif  // DETTHIN_DETTHIN_HPP
