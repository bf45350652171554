#include <catch_amalgamated.hpp>
#include "sparsevd/sparsevd.hpp"
