#pragma once

#include "qcd/numeric.hpp"
#include "qcd/series.hpp"
#include "qcd/models.hpp"
#include "qcd/detect.hpp"
#include "qcd/offline.hpp"
#include "qcd/renewal.hpp"
#include "qcd/calib.hpp"
#include "qcd/report.hpp"
