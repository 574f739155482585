#pragma once

#include "hashbeam/beamform.hpp"
#include "hashbeam/calibrate.hpp"
#include "hashbeam/detect.hpp"
#include "hashbeam/errors.hpp"
#include "hashbeam/experiment.hpp"
#include "hashbeam/matrix_io.hpp"
#include "hashbeam/model.hpp"
#include "hashbeam/parallel.hpp"
#include "hashbeam/rng.hpp"
