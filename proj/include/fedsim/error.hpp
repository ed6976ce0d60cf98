#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Precondition / configuration violations. CLI maps these to exit code 2.
class ContractError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Dataset and CSV problems (bad rows, empty files, schema mismatch). Exit code 3.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Non-finite values, iteration non-convergence. Exit code 4.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Filesystem failures. Exit code 5.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace fedsim
