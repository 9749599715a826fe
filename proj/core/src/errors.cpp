#include "tpnerf/errors.hpp"

namespace tpnerf {

void throw_input(const std::string& what) { throw InputError(what); }

}  // namespace tpnerf
