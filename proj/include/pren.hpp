#pragma once

#include "pren/errors.hpp"
#include "pren/random.hpp"
#include "pren/tensor.hpp"
#include "pren/ops.hpp"
#include "pren/grad_check.hpp"
#include "pren/params.hpp"
#include "pren/backbone.hpp"
#include "pren/aggregators.hpp"
#include "pren/vocab.hpp"
#include "pren/textrep.hpp"
#include "pren/targets.hpp"
#include "pren/attention2d.hpp"
#include "pren/model.hpp"
#include "pren/pgm.hpp"
#include "pren/synthdata.hpp"
#include "pren/training.hpp"
#include "pren/config.hpp"
#include "pren/checkpoint.hpp"
#include "pren/cli.hpp"
