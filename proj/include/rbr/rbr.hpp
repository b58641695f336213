#pragma once

#include "rbr/error.hpp"
#include "rbr/rng.hpp"
#include "rbr/numlin.hpp"
#include "rbr/binio.hpp"
#include "rbr/dataio.hpp"
#include "rbr/dictionary.hpp"
#include "rbr/solvers.hpp"
#include "rbr/metrics.hpp"
#include "rbr/csen.hpp"
#include "rbr/synth.hpp"
#include "rbr/experiment.hpp"
