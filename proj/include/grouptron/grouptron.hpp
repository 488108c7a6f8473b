#pragma once

// Convenience umbrella for the whole library. The command-line layer lives in
// grouptron/cli.hpp and is not pulled in here.

#include "grouptron/dataio.hpp"
#include "grouptron/errors.hpp"
#include "grouptron/eval.hpp"
#include "grouptron/grouping.hpp"
#include "grouptron/model.hpp"
#include "grouptron/nets.hpp"
#include "grouptron/params.hpp"
#include "grouptron/plot.hpp"
#include "grouptron/stgraph.hpp"
#include "grouptron/tensor.hpp"
#include "grouptron/trainer.hpp"
#include "grouptron/vec2.hpp"
