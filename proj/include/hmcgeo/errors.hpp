#pragma once

#include <stdexcept>
#include <string>

namespace hmcgeo {

// Base class for all library failures. Subclasses distinguish caller errors
// (bad arguments, bad configs) from numerical/runtime failures so the CLI can
// map them to distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument values: dimension mismatches, out-of-range parameters.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration (CLI flags / JSON config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Jacobi metric degenerates when the energy level does not exceed the
// potential at the evaluation point.
class DegenerateMetricError : public Error {
 public:
  using Error::Error;
};

// An operation requires a model family the given model does not belong to.
class UnsupportedModelError : public Error {
 public:
  using Error::Error;
};

// Non-finite state encountered while integrating a trajectory.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, long step) : Error(what), step(step) {}
  long step = -1;
};

// Point outside the supported domain of a spline field or image.
class BoundaryError : public Error {
 public:
  using Error::Error;
};

// A linear or nonlinear solver failed to produce a usable result.
class SolverError : public Error {
 public:
  using Error::Error;
};

// Step-size search exhausted its budget; carries the best candidate found.
class TuningError : public Error {
 public:
  TuningError(const std::string& what, double best_step_size)
      : Error(what), best_step_size(best_step_size) {}
  double best_step_size = 0.0;
};

// Coarse Ricci curvature is undefined for coinciding base points.
class UndefinedCurvatureError : public Error {
 public:
  using Error::Error;
};

// Concentration machinery requires strictly positive curvature.
class NegativeCurvatureError : public Error {
 public:
  using Error::Error;
};

// File I/O failures (images, configs, outputs).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmcgeo
