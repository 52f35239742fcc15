#pragma once

// EFLD1 field files: one JSON header line, then the payload as little-endian
// binary64, node-major (x fastest) and component-minor.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "elastrecon/grid.hpp"

namespace elastrecon {

class FieldFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string field_header(const Field& f);

void write_field(std::ostream& os, const Field& f);
void write_field(const std::filesystem::path& path, const Field& f);

/// Throws FieldFormatError on a malformed header, a short or long payload, or
/// non-finite values.
Field read_field(std::istream& is);
Field read_field(const std::filesystem::path& path);

}  // namespace elastrecon
