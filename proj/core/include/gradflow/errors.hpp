#pragma once

#include <stdexcept>
#include <string>

namespace gradflow {

/// Base class for all gradflow errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Newton failed to reach the requested residual within the iteration cap.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, int knot = -1)
      : Error(what), knot_index(knot) {}
  int knot_index;  // -1 when the failure is not tied to a flow knot
};

/// Support within the threshold reached the grid boundary; enlarge the box.
class DomainTooSmall : public Error {
 public:
  using Error::Error;
};

/// A sampled direction violates the declared ellipticity window.
class EllipticityViolation : public Error {
 public:
  using Error::Error;
};

/// Detachment set has no node whose full stencil lies inside it.
class EmptyInterior : public Error {
 public:
  using Error::Error;
};

/// Conjugate gradient failed to converge.
class CGNonConvergence : public Error {
 public:
  using Error::Error;
};

/// Spectral decomposition requested beyond the configured node cap.
class SpectralCapExceeded : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration file or flag.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed configuration violating an invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradflow
