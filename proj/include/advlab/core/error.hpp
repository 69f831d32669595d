#pragma once

#include <stdexcept>
#include <string>

namespace advlab {

// Base for every error raised by the library. Subclasses name the failure
// category so callers (the CLI in particular) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ADVLAB_DEFINE_ERROR(Name) \
  class Name : public Error {     \
   public:                        \
    using Error::Error;           \
  }

ADVLAB_DEFINE_ERROR(DimensionError);
ADVLAB_DEFINE_ERROR(InputError);
ADVLAB_DEFINE_ERROR(UsageError);
ADVLAB_DEFINE_ERROR(NumericError);
ADVLAB_DEFINE_ERROR(SpecError);
ADVLAB_DEFINE_ERROR(IngestionError);
ADVLAB_DEFINE_ERROR(DatasetError);
ADVLAB_DEFINE_ERROR(ParameterError);
ADVLAB_DEFINE_ERROR(AttackError);
ADVLAB_DEFINE_ERROR(TrainingError);
ADVLAB_DEFINE_ERROR(RosterError);
ADVLAB_DEFINE_ERROR(ReportError);
ADVLAB_DEFINE_ERROR(CheckpointError);
ADVLAB_DEFINE_ERROR(ConfigError);

#undef ADVLAB_DEFINE_ERROR

}  // namespace advlab
