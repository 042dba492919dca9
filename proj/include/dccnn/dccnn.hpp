#pragma once

#include "dccnn/data.hpp"
#include "dccnn/errors.hpp"
#include "dccnn/kernels.hpp"
#include "dccnn/losses.hpp"
#include "dccnn/model.hpp"
#include "dccnn/oracle.hpp"
#include "dccnn/patches.hpp"
#include "dccnn/recovery.hpp"
#include "dccnn/solver.hpp"
#include "dccnn/verification.hpp"
