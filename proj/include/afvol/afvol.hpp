#pragma once

#include "afvol/autodiff.hpp"
#include "afvol/data.hpp"
#include "afvol/error.hpp"
#include "afvol/garch.hpp"
#include "afvol/layers.hpp"
#include "afvol/model.hpp"
#include "afvol/nelder_mead.hpp"
#include "afvol/pipeline.hpp"
#include "afvol/random.hpp"
#include "afvol/serialize.hpp"
#include "afvol/tensor.hpp"
#include "afvol/train.hpp"
