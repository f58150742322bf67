#pragma once

#include "eside/ensemble.hpp"
#include "eside/error.hpp"
#include "eside/explain.hpp"
#include "eside/features.hpp"
#include "eside/mlp.hpp"
#include "eside/model_io.hpp"
#include "eside/multilabel.hpp"
#include "eside/raster.hpp"
#include "eside/raster_io.hpp"
#include "eside/schedule.hpp"
#include "eside/spectral.hpp"
#include "eside/variance.hpp"
