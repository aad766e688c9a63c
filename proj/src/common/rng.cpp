#include "nsdesk/common/rng.hpp"

#include <sstream>

#include "nsdesk/common/error.hpp"

namespace nsdesk {

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
}

void Rng::set_state(const std::string& text) {
    std::istringstream in(text);
    in >> engine_;
    if (!in) {
        throw ParseError("malformed RNG state");
    }
}

}  // namespace nsdesk
