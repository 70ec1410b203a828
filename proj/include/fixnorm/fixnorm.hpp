#pragma once

#include "fixnorm/autodiff.hpp"
#include "fixnorm/config.hpp"
#include "fixnorm/dataset.hpp"
#include "fixnorm/errors.hpp"
#include "fixnorm/gradcheck.hpp"
#include "fixnorm/heads.hpp"
#include "fixnorm/metrics_io.hpp"
#include "fixnorm/model.hpp"
#include "fixnorm/optimizer.hpp"
#include "fixnorm/tensor.hpp"
#include "fixnorm/trainer.hpp"
#include "fixnorm/tuner.hpp"
