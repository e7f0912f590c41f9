#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wildtta/tensor.hpp"

namespace testing {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng);
    return v;
}

inline wildtta::Tensor random_tensor(wildtta::Shape shape, std::uint64_t seed, bool grad = false, double scale = 1.0) {
    const std::size_t n = wildtta::shape_numel(shape);
    return wildtta::Tensor::from(std::move(shape), random_values(n, seed, scale), grad);
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("wildtta-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace testing
