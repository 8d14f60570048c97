#pragma once

// Umbrella for the training, evaluation, persistence, and reporting stack.

#include "groundqa/harness/checkpoint.hpp"
#include "groundqa/harness/config.hpp"
#include "groundqa/harness/evaluate.hpp"
#include "groundqa/harness/metrics.hpp"
#include "groundqa/harness/models.hpp"
#include "groundqa/harness/report.hpp"
#include "groundqa/harness/train.hpp"
