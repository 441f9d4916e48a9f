#include "dgdata/rng.hpp"

#include <cmath>
#include <sstream>

#include "dgdata/errors.hpp"

namespace dgdata {

int Rng::uniform_int(int n) {
    if (n <= 0) throw ConfigError("uniform_int requires n > 0");
    uint64_t bound = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return static_cast<int>(x % bound);
}

double Rng::normal() {
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
    double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Rng Rng::fork(uint64_t stream_id) {
    uint64_t s = gen_() ^ (stream_id * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    return Rng(s);
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
}

void Rng::deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (is.fail()) throw IntegrityError("invalid rng state string");
}

} // namespace dgdata
