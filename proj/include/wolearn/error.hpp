#pragma once

#include <stdexcept>
#include <string>

namespace wolearn {

// Base of every exception thrown by the library. Subclasses name the failure
// category so callers (and the CLI) can report it without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class HorizonError : public Error {
public:
    using Error::Error;
};

class DegenerateWeightsError : public Error {
public:
    using Error::Error;
};

// A nuisance stage could not be fitted (e.g. empty subsample under extreme
// non-overlap). The message identifies the stage index and plan value.
class StageError : public Error {
public:
    StageError(const std::string& what, int stage, int plan_value)
        : Error(what), stage_(stage), plan_value_(plan_value) {}
    int stage() const { return stage_; }
    int plan_value() const { return plan_value_; }

private:
    int stage_;
    int plan_value_;
};

class UsageError : public Error {
public:
    using Error::Error;
};

// Fired when a stage-2 trajectory reached a nuisance fit.
class SplitDisciplineError : public Error {
public:
    using Error::Error;
};

}  // namespace wolearn
