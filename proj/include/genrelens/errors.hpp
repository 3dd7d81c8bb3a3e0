#pragma once

#include <stdexcept>
#include <string>

namespace genrelens {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateImage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyRegion : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingEmbedding : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OutOfVocabulary : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingFeature : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyBook : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidConfig : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IncompatibleMatrices : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace genrelens
