#pragma once

#include "rareaug/error.hpp"
#include "rareaug/random.hpp"
#include "rareaug/dataset.hpp"
#include "rareaug/mahalanobis.hpp"
#include "rareaug/minority.hpp"
#include "rareaug/neuralnet.hpp"
#include "rareaug/wgan.hpp"
#include "rareaug/matcher.hpp"
#include "rareaug/metrics.hpp"
#include "rareaug/pipeline.hpp"
#include "rareaug/harness.hpp"
#include "rareaug/diagnostics.hpp"
