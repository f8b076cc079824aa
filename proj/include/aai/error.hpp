#pragma once

#include <stdexcept>
#include <string>

namespace aai {

// Category codes surfaced by the CLI as "error [<category>]: <message>".
enum class ErrorCategory {
    shape,
    degenerate_input,
    bounds,
    config,
    length,
    format,
    annotation,
    schema,
    load,
    coverage,
    generation,
    inconsistent_world,
    unclassifiable,
    incomplete_trace,
    empty_input,
    render,
    io,
};

inline const char* to_string(ErrorCategory cat) {
    switch (cat) {
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::degenerate_input: return "degenerate-input";
        case ErrorCategory::bounds: return "bounds";
        case ErrorCategory::config: return "config";
        case ErrorCategory::length: return "length";
        case ErrorCategory::format: return "format";
        case ErrorCategory::annotation: return "annotation";
        case ErrorCategory::schema: return "schema";
        case ErrorCategory::load: return "load";
        case ErrorCategory::coverage: return "coverage";
        case ErrorCategory::generation: return "generation";
        case ErrorCategory::inconsistent_world: return "inconsistent-world";
        case ErrorCategory::unclassifiable: return "unclassifiable";
        case ErrorCategory::incomplete_trace: return "incomplete-trace";
        case ErrorCategory::empty_input: return "empty-input";
        case ErrorCategory::render: return "render";
        case ErrorCategory::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& message)
        : std::runtime_error(message), category_(cat) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

}  // namespace aai
