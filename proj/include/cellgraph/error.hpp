#pragma once

#include <stdexcept>
#include <string>

namespace cellgraph {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when dataset files are missing or malformed. Carries the sample and
/// path that caused the failure so callers can report them.
class DatasetError : public Error {
public:
    DatasetError(std::string sample_id, std::string path, const std::string& what)
        : Error(format(sample_id, path, what)), sample_id_(std::move(sample_id)), path_(std::move(path)) {}

    const std::string& sample_id() const noexcept { return sample_id_; }
    const std::string& path() const noexcept { return path_; }

private:
    static std::string format(const std::string& sample, const std::string& path, const std::string& what) {
        std::string msg = what;
        if (!sample.empty()) msg += " [sample " + sample + "]";
        if (!path.empty()) msg += " [path " + path + "]";
        return msg;
    }

    std::string sample_id_;
    std::string path_;
};

}  // namespace cellgraph
