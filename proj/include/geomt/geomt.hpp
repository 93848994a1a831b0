#pragma once

#include "geomt/ablation.hpp"
#include "geomt/checkpoint.hpp"
#include "geomt/class_balance.hpp"
#include "geomt/config.hpp"
#include "geomt/data/dataset.hpp"
#include "geomt/data/patch.hpp"
#include "geomt/data/synthetic.hpp"
#include "geomt/data/transforms.hpp"
#include "geomt/geo_encoding.hpp"
#include "geomt/metrics.hpp"
#include "geomt/network.hpp"
#include "geomt/optimizer.hpp"
#include "geomt/run.hpp"
#include "geomt/training.hpp"
