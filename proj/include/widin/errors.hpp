#pragma once

#include <stdexcept>
#include <string>

namespace widin {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not match the operation's contract.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Input is mathematically unusable (zero-norm vector, empty batch, ...).
struct DegenerateInput : Error {
    explicit DegenerateInput(const std::string& msg) : Error(msg) {}
};

// Word not present in the vocabulary; carries the offending word.
struct UnknownToken : Error {
    explicit UnknownToken(const std::string& w)
        : Error("unknown token: \"" + w + "\""), word(w) {}
    std::string word;
};

// Bad configuration key or value.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// NaN / Inf where a finite value is required.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Problems with the binary artifact container.
struct ArtifactError : Error {
    enum class Code { BadMagic, BadVersion, BadChecksum, KindMismatch, Truncated, Io };
    ArtifactError(Code c, const std::string& msg) : Error(msg), code(c) {}
    Code code;
};

// A required input file is absent; carries the path.
struct MissingArtifact : Error {
    explicit MissingArtifact(const std::string& p)
        : Error("missing artifact: " + p), path(p) {}
    std::string path;
};

}  // namespace widin
