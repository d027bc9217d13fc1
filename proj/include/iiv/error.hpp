#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace iiv {

/// Base class for every error raised by the library. Callers that only need
/// to distinguish "bad input" from "bug" can catch this one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingColumn : public Error {
public:
    explicit MissingColumn(const std::string& column)
        : Error("missing column: " + column), column_(column) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

class EmptyAfterCleaning : public Error {
public:
    using Error::Error;
};

/// A cell that cannot be interpreted (non-numeric, non-integer treatment,
/// undeclared treatment label). `row` is the 1-based data row, header excluded.
class NonNumericCell : public Error {
public:
    NonNumericCell(std::size_t row, const std::string& column, const std::string& what)
        : Error("row " + std::to_string(row) + ", column " + column + ": " + what),
          row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class EmptyCell : public Error {
public:
    using Error::Error;
};

class DegenerateVariable : public Error {
public:
    using Error::Error;
};

class RejectedModel : public Error {
public:
    using Error::Error;
};

class AllEmpty : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace iiv
