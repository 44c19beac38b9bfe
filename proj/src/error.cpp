#include "rio/error.hpp"

namespace rio {

ParseError::ParseError(std::string file, std::size_t line, std::string field, const std::string& what)
    : Error(file + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": field '" + field + "': " + what),
      file_(std::move(file)),
      line_(line),
      field_(std::move(field)) {}

}  // namespace rio
