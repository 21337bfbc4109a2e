#ifndef COMPETENCE_ERRORS_HPP
#define COMPETENCE_ERRORS_HPP

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace competence {

enum class ErrorKind {
    DimensionMismatch,
    InvalidKernelWidth,
    InvalidThreshold,
    InsufficientReference,
    DegenerateReference,
    ToleranceUnreachable,
    AllTokensOutOfVocabulary,
    ZeroVector,
    EmptyAtlas,
    InvalidStatement,
    MalformedRecord,
    DuplicateId,
    NonFiniteValue,
    EmptyLexicon,
    NonMonotoneFrameIndex,
    UnsupportedVersion,
    MalformedDocument,
    FeedbackUnavailable,
    InvalidSpec,
    BindFailure,
    Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidKernelWidth: return "InvalidKernelWidth";
    case ErrorKind::InvalidThreshold: return "InvalidThreshold";
    case ErrorKind::InsufficientReference: return "InsufficientReference";
    case ErrorKind::DegenerateReference: return "DegenerateReference";
    case ErrorKind::ToleranceUnreachable: return "ToleranceUnreachable";
    case ErrorKind::AllTokensOutOfVocabulary: return "AllTokensOutOfVocabulary";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::EmptyAtlas: return "EmptyAtlas";
    case ErrorKind::InvalidStatement: return "InvalidStatement";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::EmptyLexicon: return "EmptyLexicon";
    case ErrorKind::NonMonotoneFrameIndex: return "NonMonotoneFrameIndex";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::MalformedDocument: return "MalformedDocument";
    case ErrorKind::FeedbackUnavailable: return "FeedbackUnavailable";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::BindFailure: return "BindFailure";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

/**
 * Every failure in the library is reported through this exception.
 *
 * Loaders attach the 1-based line number of the offending record, and the
 * message is already formatted as `<kind>: <source>:<line>: <reason>` so
 * that the CLI can print it verbatim.
 */
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& reason)
        : std::runtime_error(std::string(to_string(kind)) + ": " + reason), kind_(kind) {}

    Error(ErrorKind kind, std::string_view source, std::size_t line, const std::string& reason)
        : std::runtime_error(std::string(to_string(kind)) + ": " + std::string(source) + ":" +
                             std::to_string(line) + ": " + reason),
          kind_(kind), line_(line) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    std::optional<std::size_t> line_;
};

} // namespace competence

#endif
