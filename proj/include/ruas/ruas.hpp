#pragma once

#include "ruas/checkpoint.hpp"
#include "ruas/config.hpp"
#include "ruas/error.hpp"
#include "ruas/io.hpp"
#include "ruas/metrics.hpp"
#include "ruas/model.hpp"
#include "ruas/ops.hpp"
#include "ruas/optim.hpp"
#include "ruas/scene.hpp"
#include "ruas/search.hpp"
#include "ruas/search_space.hpp"
#include "ruas/task.hpp"
#include "ruas/tensor.hpp"
#include "ruas/train.hpp"
