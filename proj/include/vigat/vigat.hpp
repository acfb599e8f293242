#ifndef VIGAT_VIGAT_HPP
#define VIGAT_VIGAT_HPP

#include "vigat/ablation.hpp"
#include "vigat/checkpoint.hpp"
#include "vigat/error.hpp"
#include "vigat/explain.hpp"
#include "vigat/featio.hpp"
#include "vigat/gatblock.hpp"
#include "vigat/head.hpp"
#include "vigat/ops.hpp"
#include "vigat/tensor.hpp"
#include "vigat/train.hpp"
#include "vigat/xaieval.hpp"

#endif  // VIGAT_VIGAT_HPP
