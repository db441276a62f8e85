#pragma once

#include <stdexcept>
#include <string>

namespace trip {

// Base class for every error raised by the library.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed shapes, bad arguments, overlapping masks.
class argument_error : public error {
public:
  using error::error;
};

// Variable index or value outside its declared range.
class range_error : public error {
public:
  using error::error;
};

// Normalizer Tr(prod of summed cores) is not positive.
class degenerate_error : public error {
public:
  using error::error;
};

// Conditioning event has probability zero.
class null_condition_error : public error {
public:
  using error::error;
};

// Non-finite objective while fitting.
class divergence_error : public error {
public:
  divergence_error(const std::string& what, int epoch) : error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

private:
  int epoch_;
};

// Brute-force oracle refused a model above its size cap.
class size_cap_error : public error {
public:
  using error::error;
};

// Model file does not parse or its shape fields disagree with the payload.
class format_error : public error {
public:
  using error::error;
};

} // namespace trip
