#pragma once

#include "sasatr/chip.hpp"
#include "sasatr/config.hpp"
#include "sasatr/error.hpp"
#include "sasatr/fft.hpp"
#include "sasatr/io.hpp"
#include "sasatr/lab.hpp"
#include "sasatr/latent.hpp"
#include "sasatr/nn/layers.hpp"
#include "sasatr/nn/model.hpp"
#include "sasatr/nn/optimizer.hpp"
#include "sasatr/nn/serialize.hpp"
#include "sasatr/nn/tensor.hpp"
#include "sasatr/plot.hpp"
#include "sasatr/representations.hpp"
#include "sasatr/rng.hpp"
#include "sasatr/stats.hpp"
#include "sasatr/synth.hpp"
#include "sasatr/trainer.hpp"
