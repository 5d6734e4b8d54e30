#pragma once

#include <stdexcept>
#include <string>

namespace wrsim {

struct Error : std::runtime_error {
    std::string kind;
    Error(std::string k, const std::string& msg) : std::runtime_error(k + ": " + msg), kind(std::move(k)) {}
};

[[noreturn]] inline void raise(const std::string& kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace wrsim
