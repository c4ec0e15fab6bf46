#pragma once

namespace skipnet {

const char* version();

}  // namespace skipnet
