#pragma once

#include "dsur/bspline.hpp"
#include "dsur/datagen.hpp"
#include "dsur/dataset.hpp"
#include "dsur/error.hpp"
#include "dsur/fosr.hpp"
#include "dsur/inference.hpp"
#include "dsur/io.hpp"
#include "dsur/metrics.hpp"
#include "dsur/model.hpp"
#include "dsur/nn.hpp"
#include "dsur/parallel.hpp"
#include "dsur/pipeline.hpp"
#include "dsur/rng.hpp"
#include "dsur/tensor.hpp"
#include "dsur/training.hpp"
