#pragma once

#include "mvmotion/grid.hpp"
#include "mvmotion/io.hpp"
#include "mvmotion/rng.hpp"
#include "mvmotion/multiview.hpp"
#include "mvmotion/phantom.hpp"
#include "mvmotion/pyramid.hpp"
#include "mvmotion/objective.hpp"
#include "mvmotion/tracker.hpp"
#include "mvmotion/baselines.hpp"
#include "mvmotion/metrics.hpp"
#include "mvmotion/analysis.hpp"
#include "mvmotion/study_io.hpp"
