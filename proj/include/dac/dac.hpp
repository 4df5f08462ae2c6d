#ifndef DAC_DAC_HPP_INCLUDED
#define DAC_DAC_HPP_INCLUDED

#include "dac/adapter.hpp"
#include "dac/artifact_io.hpp"
#include "dac/bundle.hpp"
#include "dac/cache.hpp"
#include "dac/container.hpp"
#include "dac/contrastive.hpp"
#include "dac/error.hpp"
#include "dac/eval.hpp"
#include "dac/inference.hpp"
#include "dac/linalg.hpp"
#include "dac/random.hpp"
#include "dac/synthetic.hpp"
#include "dac/text_tune.hpp"
#include "dac/train.hpp"

#endif // DAC_DAC_HPP_INCLUDED
