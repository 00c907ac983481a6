#pragma once

// Umbrella header: anisoplanatic tilt statistics, registration-aware OTF
// modeling, spectral-ratio Fried parameter estimation, and block-matching +
// Wiener-filter turbulence mitigation.

#include "turbmit/core.hpp"
#include "turbmit/quadrature.hpp"
#include "turbmit/tilt_stats.hpp"
#include "turbmit/autocorr2d.hpp"
#include "turbmit/regmodel.hpp"
#include "turbmit/otf.hpp"
#include "turbmit/fft.hpp"
#include "turbmit/metrics.hpp"
#include "turbmit/image_io.hpp"
#include "turbmit/config_io.hpp"
#include "turbmit/mitigation.hpp"
#include "turbmit/fried.hpp"
#include "turbmit/synth.hpp"
