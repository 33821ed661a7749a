#pragma once

#include "mtbca/adam.hpp"
#include "mtbca/attention.hpp"
#include "mtbca/audio/mel.hpp"
#include "mtbca/audio/pipeline.hpp"
#include "mtbca/audio/signal.hpp"
#include "mtbca/audio/spectrum.hpp"
#include "mtbca/audio/wav.hpp"
#include "mtbca/batchnorm.hpp"
#include "mtbca/checkpoint.hpp"
#include "mtbca/config.hpp"
#include "mtbca/conv.hpp"
#include "mtbca/dataset.hpp"
#include "mtbca/errors.hpp"
#include "mtbca/gradcheck.hpp"
#include "mtbca/losses.hpp"
#include "mtbca/metrics.hpp"
#include "mtbca/model.hpp"
#include "mtbca/ops.hpp"
#include "mtbca/tensor.hpp"
#include "mtbca/train.hpp"
