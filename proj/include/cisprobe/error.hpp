// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace cisprobe {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition on a value.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Structured input that could not be parsed. `path` names the offending
/// location (JSON pointer for documents, raw text for answers).
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::string path)
        : Error(message + (path.empty() ? std::string{} : " (at " + path + ")")),
          path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Unknown name, selector or identifier.
class LookupError : public Error {
public:
    using Error::Error;
};

/// Operation invoked on an object in the wrong state.
class StateError : public Error {
public:
    using Error::Error;
};

/// Failure inside a generative backend; carries the step being executed.
class BackendError : public Error {
public:
    BackendError(const std::string& message, std::size_t step)
        : Error(message + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Transport-level scorer failure (timeout, unreachable). Retryable.
class ScorerError : public Error {
public:
    ScorerError(const std::string& message, std::string question, int attempts = 1)
        : Error(message + " [question: \"" + question + "\", attempts: " + std::to_string(attempts) + "]"),
          question_(std::move(question)),
          attempts_(attempts) {}

    const std::string& question() const noexcept { return question_; }
    int attempts() const noexcept { return attempts_; }

private:
    std::string question_;
    int attempts_;
};

/// Seed control could not assemble enough neutral seeds.
class InsufficientSeedsError : public Error {
public:
    InsufficientSeedsError(std::size_t target, std::size_t valid, std::size_t attempted)
        : Error("insufficient valid seeds: " + std::to_string(valid) + " of " + std::to_string(target) +
                " after " + std::to_string(attempted) + " attempted candidates"),
          target_(target),
          valid_(valid),
          attempted_(attempted) {}

    std::size_t target() const noexcept { return target_; }
    std::size_t valid() const noexcept { return valid_; }
    std::size_t attempted() const noexcept { return attempted_; }

private:
    std::size_t target_;
    std::size_t valid_;
    std::size_t attempted_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

}  // namespace cisprobe
