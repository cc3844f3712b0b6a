#pragma once

#include "lsm/errors.hpp"
#include "lsm/linalg.hpp"
#include "lsm/manifold.hpp"
#include "lsm/classic.hpp"
#include "lsm/mutual.hpp"
#include "lsm/data.hpp"
#include "lsm/model.hpp"
#include "lsm/train.hpp"
