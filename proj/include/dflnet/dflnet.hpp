#pragma once

#include "dflnet/errors.hpp"
#include "dflnet/tensor.hpp"
#include "dflnet/ops.hpp"
#include "dflnet/conv.hpp"
#include "dflnet/model.hpp"
#include "dflnet/pcl.hpp"
#include "dflnet/attacks.hpp"
#include "dflnet/data.hpp"
#include "dflnet/checkpoint.hpp"
#include "dflnet/config.hpp"
#include "dflnet/train.hpp"
#include "dflnet/report.hpp"
#include "dflnet/gradcheck.hpp"
