#pragma once

#include <stdexcept>
#include <string>

namespace tcja {

// Shape or dimension contract violated by an operation's inputs.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable input data (event files, manifests, frames).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or activation detected during training.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t batch_index)
      : std::runtime_error(what), batch_index_(batch_index) {}
  std::size_t batch_index() const { return batch_index_; }

 private:
  std::size_t batch_index_;
};

// A trainable parameter received no gradient: the graph is broken.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Corrupt checkpoint, or checkpoint incompatible with the requested network.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tcja
