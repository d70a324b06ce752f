#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dermpolar {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A grid was requested or supplied with a zero/negative extent or too many axes.
class InvalidShape : public Error {
public:
    using Error::Error;
};

/// Operand shapes are inconsistent with the operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A lesion mask contains no foreground pixels.
class EmptyMask : public Error {
public:
    using Error::Error;
};

/// A lesion mask is too small or too close to collinear for ellipse fitting.
class DegenerateMask : public Error {
public:
    using Error::Error;
};

/// A weak-label constraint set cannot be satisfied by any distribution field.
class InfeasibleConstraints : public Error {
public:
    using Error::Error;
};

/// Every class probability vanished in the product across views.
class DegenerateFusion : public Error {
public:
    using Error::Error;
};

/// Bad or unknown keys in the pipeline configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written, or parsed.
class IoError : public Error {
public:
    using Error::Error;
};

/// The constraint projection did not converge; carries per-constraint residuals.
class NotConverged : public Error {
public:
    NotConverged(const std::string& message, std::vector<double> residuals)
        : Error(message), residuals_(std::move(residuals)) {}

    const std::vector<double>& residuals() const { return residuals_; }

private:
    std::vector<double> residuals_;
};

} // namespace dermpolar
