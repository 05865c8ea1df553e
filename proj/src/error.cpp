#include "headpursuit/error.hpp"

namespace headpursuit {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::AllAtomsExcluded: return "AllAtomsExcluded";
    case ErrorKind::ZeroSignal: return "ZeroSignal";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NoKeywordMatched: return "NoKeywordMatched";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::InsufficientPool: return "InsufficientPool";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::UnknownToken: return "UnknownToken";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::CrcMismatch: return "CrcMismatch";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::MalformedFile: return "MalformedFile";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::IoError:
    case ErrorKind::BadMagic:
    case ErrorKind::UnsupportedVersion:
    case ErrorKind::CrcMismatch:
    case ErrorKind::TruncatedFile:
    case ErrorKind::MalformedFile:
    case ErrorKind::UnknownToken:
    case ErrorKind::NoKeywordMatched:
    case ErrorKind::EmptyInput:
      return 3;
    case ErrorKind::DimensionMismatch:
    case ErrorKind::AllAtomsExcluded:
    case ErrorKind::ZeroSignal:
      return 4;
    case ErrorKind::InvalidArgument:
    case ErrorKind::KTooLarge:
    case ErrorKind::InsufficientPool:
    case ErrorKind::EmptyMask:
    case ErrorKind::InvalidConfig:
    case ErrorKind::TokenOutOfRange:
    case ErrorKind::SequenceTooLong:
      return 2;
  }
  return 2;
}

}  // namespace headpursuit
