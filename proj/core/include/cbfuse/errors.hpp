#pragma once

#include <stdexcept>
#include <string>

namespace cbfuse {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularMap : Error { using Error::Error; };
struct GeometryMismatch : Error { using Error::Error; };
struct UnsupportedFormat : Error { using Error::Error; };
struct CorruptHeader : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct BadGeometry : Error { using Error::Error; };
struct EmptyLiver : Error { using Error::Error; };
struct InfeasiblePlacement : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct DivergedLoss : Error { using Error::Error; };
struct BadRatios : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct ColumnMismatch : Error { using Error::Error; };

}  // namespace cbfuse
