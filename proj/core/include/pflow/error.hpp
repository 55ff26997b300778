#pragma once

#include <stdexcept>
#include <string>

namespace pflow {

/// Contract violation or unrecoverable runtime fault (bad shapes, corrupt
/// files, non-finite simulation state). Data-quality problems go through
/// validate() instead and are reported as values, not thrown.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
[[noreturn]] inline void raise(const std::string& msg) { throw Error(msg); }
}  // namespace detail

}  // namespace pflow

#define PFLOW_CHECK(cond, msg)                        \
    do {                                              \
        if (!(cond)) ::pflow::detail::raise((msg));   \
    } while (0)
