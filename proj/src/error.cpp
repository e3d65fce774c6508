#include "protorect/error.hpp"

namespace protorect {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::format: return "format";
        case ErrorKind::truncation: return "truncation";
        case ErrorKind::data: return "data";
        case ErrorKind::degenerate_vector: return "degenerate-vector";
        case ErrorKind::capacity: return "capacity";
        case ErrorKind::shape: return "shape";
        case ErrorKind::label: return "label";
        case ErrorKind::training_failure: return "training-failure";
        case ErrorKind::undefined_bound: return "undefined-bound";
        case ErrorKind::io: return "io";
        case ErrorKind::usage: return "usage";
    }
    return "unknown";
}

}  // namespace protorect
