#pragma once

// Umbrella header for the recursive-denoising segmentation library.

#include "diffseg/common.hpp"
#include "diffseg/tensor.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/dataset.hpp"
#include "diffseg/png_io.hpp"
#include "diffseg/layers.hpp"
#include "diffseg/denoiser.hpp"
#include "diffseg/optimizer.hpp"
#include "diffseg/trainer.hpp"
#include "diffseg/sampler.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/serialize.hpp"
#include "diffseg/checkpoint.hpp"
