// Umbrella header for the change-detection toolkit.
#pragma once

#include "cdtk/confidence.hpp"
#include "cdtk/dataset.hpp"
#include "cdtk/errors.hpp"
#include "cdtk/fcn.hpp"
#include "cdtk/gradcheck.hpp"
#include "cdtk/metrics.hpp"
#include "cdtk/pipeline.hpp"
#include "cdtk/raster.hpp"
#include "cdtk/rng.hpp"
#include "cdtk/synth.hpp"
#include "cdtk/tensor.hpp"
#include "cdtk/trainer.hpp"
#include "cdtk/unsupervised.hpp"
