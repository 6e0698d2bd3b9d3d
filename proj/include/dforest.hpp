#pragma once

#include "dforest/attention.hpp"
#include "dforest/backward.hpp"
#include "dforest/data.hpp"
#include "dforest/error.hpp"
#include "dforest/forest.hpp"
#include "dforest/matrix.hpp"
#include "dforest/model.hpp"
#include "dforest/model_io.hpp"
#include "dforest/objective.hpp"
#include "dforest/optim.hpp"
#include "dforest/trainer.hpp"
