#pragma once

#include "prequel/analysis.hpp"
#include "prequel/augment.hpp"
#include "prequel/corpus.hpp"
#include "prequel/encoder.hpp"
#include "prequel/error.hpp"
#include "prequel/evaluate.hpp"
#include "prequel/io.hpp"
#include "prequel/manifest.hpp"
#include "prequel/metrics.hpp"
#include "prequel/model.hpp"
#include "prequel/ngram_lm.hpp"
#include "prequel/random.hpp"
#include "prequel/text.hpp"
#include "prequel/train.hpp"
#include "prequel/transport.hpp"
