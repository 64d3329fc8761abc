#ifndef ROMBAYES_ROMBAYES_HPP
#define ROMBAYES_ROMBAYES_HPP

#include "rombayes/common.hpp"
#include "rombayes/config.hpp"
#include "rombayes/discretization.hpp"
#include "rombayes/enkf.hpp"
#include "rombayes/fom.hpp"
#include "rombayes/pce.hpp"
#include "rombayes/pipeline.hpp"
#include "rombayes/pod.hpp"
#include "rombayes/prior.hpp"
#include "rombayes/rom.hpp"
#include "rombayes/rvm.hpp"
#include "rombayes/sensitivity.hpp"
#include "rombayes/text_io.hpp"

#endif
