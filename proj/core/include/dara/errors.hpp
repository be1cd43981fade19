#pragma once

#include <stdexcept>
#include <string>

namespace dara {

/// Base class for all errors thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shape disagreement (matmul inner dims, concat widths, ...).
class ShapeError : public Error {
  using Error::Error;
};

/// Invalid or inconsistent configuration (width not divisible by heads,
/// share width larger than the branch width, ...).
class ConfigError : public Error {
  using Error::Error;
};

/// Malformed input data (token id out of range, unparseable file).
class DataError : public Error {
  using Error::Error;
};

/// API contract violation (non-scalar loss, empty dataset, missing grad).
class ContractError : public Error {
  using Error::Error;
};

/// Shared-weight handle that does not resolve to a registry entry.
class RegistryError : public Error {
  using Error::Error;
};

/// Filesystem or stream failure.
class IoError : public Error {
  using Error::Error;
};

}  // namespace dara
