#include "skipnet/version.hpp"

namespace skipnet {

const char* version() { return "0.1.0"; }

}  // namespace skipnet
