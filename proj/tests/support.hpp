#ifndef PROTORECT_TESTS_SUPPORT_HPP
#define PROTORECT_TESTS_SUPPORT_HPP

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <unistd.h>

#include "protorect/featurestore.hpp"
#include "protorect/matrix.hpp"

namespace testing {

inline protorect::Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
    protorect::Matrix m;
    for (const auto& r : values) m.push_row(std::vector<double>(r));
    return m;
}

/// Unique scratch path under the system temp directory; removed on destruction.
class TempPath {
public:
    explicit TempPath(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("protorect_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++) + "_" + name)) {}
    ~TempPath() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    static int& counter() {
        static int n = 0;
        return n;
    }
    std::filesystem::path path_;
};

/// The synthetic benchmark set used by the statistical tests.
inline protorect::FeatureSet bench_set(std::uint64_t seed = 0) {
    protorect::SynthOptions o;
    o.layout = protorect::MeanLayout::orthant;
    o.seed = seed;
    return protorect::synth(o);
}

}  // namespace testing

#endif
