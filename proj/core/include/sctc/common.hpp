#pragma once

#include <stdexcept>
#include <string>

namespace sctc {

// Contract violation: the caller passed arguments outside an operation's
// documented domain. Maps to std::invalid_argument.
inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Data or state error: arguments were well-formed but the computation cannot
// proceed (unreadable file, non-finite loss, disconnected graph, ...).
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace sctc
