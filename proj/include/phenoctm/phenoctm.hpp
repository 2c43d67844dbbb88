#pragma once
// Everything at once.

#include "phenoctm/corpus.hpp"
#include "phenoctm/error.hpp"
#include "phenoctm/learning.hpp"
#include "phenoctm/model.hpp"
#include "phenoctm/numerics.hpp"
#include "phenoctm/parallel.hpp"
#include "phenoctm/phenotype.hpp"
#include "phenoctm/rng.hpp"
#include "phenoctm/summarize.hpp"
#include "phenoctm/synth.hpp"
#include "phenoctm/variational.hpp"
