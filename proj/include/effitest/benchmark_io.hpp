// Benchmark documents: graph, buffers, exclusions, mean vector, row-major
// covariance and (optionally) the generator config, as one JSON object.

#ifndef EFFITEST_BENCHMARK_IO_HPP
#define EFFITEST_BENCHMARK_IO_HPP

#include "effitest/timing_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace effitest {

inline constexpr int kBenchmarkFormatVersion = 1;

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Benchmark& bench);
Benchmark benchmark_from_json(const nlohmann::json& j);

void save_benchmark(const Benchmark& bench, const std::filesystem::path& path);
Benchmark load_benchmark(const std::filesystem::path& path);

}  // namespace effitest

#endif
