#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace headpursuit {

enum class ErrorKind {
  // numerical / algorithmic
  DimensionMismatch,
  AllAtomsExcluded,
  ZeroSignal,
  InvalidArgument,
  // head selection
  NoKeywordMatched,
  KTooLarge,
  InsufficientPool,
  EmptyMask,
  EmptyInput,
  // model
  InvalidConfig,
  TokenOutOfRange,
  SequenceTooLong,
  UnknownToken,
  // file format
  IoError,
  BadMagic,
  UnsupportedVersion,
  CrcMismatch,
  TruncatedFile,
  MalformedFile,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit code for an error class: 3 data-format, 4 numerical, 2 usage.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace headpursuit
