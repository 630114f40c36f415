#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stwa {

// Thrown for bad shapes, bad configs, malformed inputs. The CLI maps this
// family to exit code 2 (usage/validation) and IoError to exit code 1.
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : ValueError {
    using ValueError::ValueError;
};

struct ParseError : ValueError {
    using ValueError::ValueError;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

}  // namespace stwa
