#pragma once

#include "orbitsr/tensor.hpp"
#include "orbitsr/kernels.hpp"
#include "orbitsr/bicubic.hpp"
#include "orbitsr/random.hpp"
#include "orbitsr/autodiff.hpp"
#include "orbitsr/optim.hpp"
#include "orbitsr/model.hpp"
#include "orbitsr/weights.hpp"
#include "orbitsr/tiling.hpp"
#include "orbitsr/metrics.hpp"
#include "orbitsr/dataio.hpp"
#include "orbitsr/resources.hpp"
#include "orbitsr/pipeline.hpp"
#include "orbitsr/trainer.hpp"
