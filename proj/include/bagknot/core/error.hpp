#pragma once

#include <stdexcept>
#include <string>

namespace bagknot {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (ranges, probabilities, hyperparameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed call arguments (shapes, counts, unknown labels).
class InputError : public Error {
 public:
  using Error::Error;
};

/// The simulator could not produce a valid surface.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// The scripted expert cannot reach a stage waypoint in time.
class DemoInfeasibleError : public Error {
 public:
  using Error::Error;
};

/// On-disk artifacts disagree with their manifest.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values inside a network or sampler.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Wraps a failure inside one stage of the experiment pipeline.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace bagknot
