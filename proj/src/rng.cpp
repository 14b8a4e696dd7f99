#include "masp/rng.hpp"

#include <sstream>

#include "masp/errors.hpp"

namespace masp {

std::string Rng::serialize() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
}

void Rng::deserialize(const std::string& state) {
    std::istringstream in(state);
    in >> engine_;
    if (in.fail()) throw ValidationError("malformed RNG state");
}

}  // namespace masp
