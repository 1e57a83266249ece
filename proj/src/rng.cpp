#include "nvdiff/rng.hpp"

#include "nvdiff/errors.hpp"

#include <sstream>

namespace nvdiff {

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw ParseError("invalid RNG state", 0);
}

}  // namespace nvdiff
