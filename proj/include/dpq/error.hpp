#pragma once

#include <stdexcept>
#include <string>

namespace dpq {

/// Every failure the library reports, one kind per contract violation.
enum class ErrorKind {
  NotFound,
  MalformedWav,
  UnsupportedFormat,
  IoError,
  SilentInput,
  NonPowerOfTwoLength,
  InputTooShort,
  ZeroPowerInput,
  NumericalFailure,
  EmptyCorpus,
  ConfigInvalid,
  ShapeMismatch,
  RankMismatch,
  NotScalar,
  SpeakerOutOfRange,
  FrameTooShort,
  ParseError,
  ScoreOutOfRange,
  DuplicateKey,
  MissingLabel,
  UnknownSpeaker,
  EmptyDataset,
  DegenerateLabels,
  DegenerateInput,
  BadMagic,
  VersionUnsupported,
  ChecksumMismatch,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + detail),
        kind_(kind),
        detail_(detail) {}

  ErrorKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::MalformedWav: return "MalformedWav";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SilentInput: return "SilentInput";
    case ErrorKind::NonPowerOfTwoLength: return "NonPowerOfTwoLength";
    case ErrorKind::InputTooShort: return "InputTooShort";
    case ErrorKind::ZeroPowerInput: return "ZeroPowerInput";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::RankMismatch: return "RankMismatch";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::SpeakerOutOfRange: return "SpeakerOutOfRange";
    case ErrorKind::FrameTooShort: return "FrameTooShort";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorKind::DuplicateKey: return "DuplicateKey";
    case ErrorKind::MissingLabel: return "MissingLabel";
    case ErrorKind::UnknownSpeaker: return "UnknownSpeaker";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionUnsupported: return "VersionUnsupported";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
  }
  return "Unknown";
}

}  // namespace dpq
