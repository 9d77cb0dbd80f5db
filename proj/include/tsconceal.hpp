#pragma once

#include "tsconceal/aggregation.hpp"
#include "tsconceal/attacks.hpp"
#include "tsconceal/config.hpp"
#include "tsconceal/data.hpp"
#include "tsconceal/diffcore.hpp"
#include "tsconceal/discriminator.hpp"
#include "tsconceal/error.hpp"
#include "tsconceal/metrics.hpp"
#include "tsconceal/models.hpp"
#include "tsconceal/plot.hpp"
#include "tsconceal/random.hpp"
#include "tsconceal/runner.hpp"
#include "tsconceal/scores.hpp"
#include "tsconceal/tensor.hpp"
