#pragma once

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/rng.hpp"
#include "pcl_forge/common/tensor.hpp"
#include "pcl_forge/detect/model.hpp"
#include "pcl_forge/metrics/metrics.hpp"
#include "pcl_forge/noise/constrained.hpp"
#include "pcl_forge/noise/srm.hpp"
#include "pcl_forge/pcl/loss.hpp"
#include "pcl_forge/pcl/pairs.hpp"
#include "pcl_forge/plot/plot.hpp"
#include "pcl_forge/synth/dataset.hpp"
#include "pcl_forge/synth/generate.hpp"
#include "pcl_forge/synth/pnm.hpp"
#include "pcl_forge/train/checkpoint.hpp"
#include "pcl_forge/train/config.hpp"
#include "pcl_forge/train/evaluate.hpp"
#include "pcl_forge/train/experiment.hpp"
#include "pcl_forge/train/trainer.hpp"
