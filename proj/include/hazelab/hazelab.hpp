#pragma once

#include "hazelab/image.hpp"
#include "hazelab/image_io.hpp"
#include "hazelab/dcp.hpp"
#include "hazelab/matting.hpp"
#include "hazelab/loss.hpp"
#include "hazelab/tmap_opt.hpp"
#include "hazelab/can.hpp"
#include "hazelab/metrics.hpp"
#include "hazelab/can_train.hpp"
