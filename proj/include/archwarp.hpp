#ifndef ARCHWARP_HPP
#define ARCHWARP_HPP

#include "archwarp/acf.hpp"
#include "archwarp/arch_curve.hpp"
#include "archwarp/cpr.hpp"
#include "archwarp/errors.hpp"
#include "archwarp/ffd.hpp"
#include "archwarp/grid.hpp"
#include "archwarp/io.hpp"
#include "archwarp/lattice_fit.hpp"
#include "archwarp/losses.hpp"
#include "archwarp/metrics.hpp"
#include "archwarp/optimize.hpp"
#include "archwarp/parallel.hpp"
#include "archwarp/phantom.hpp"
#include "archwarp/volume.hpp"

#endif
