#pragma once

// Every numeric tolerance and fixed constant used by the library and its test
// suites lives here.

namespace cgf::tol {

// Primitives.
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kSoftmaxRowSum = 1e-6;
inline constexpr double kLayerNormMean = 1e-5;
inline constexpr double kLayerNormVar = 1e-4;
inline constexpr double kConvRelative = 1e-5;

// Gradient checks: central differences in 64-bit.
inline constexpr double kFiniteDiffStep = 1e-3;
inline constexpr double kGradRel = 1e-3;
inline constexpr double kGradRelEndToEnd = 1e-2;

// Frequency separation.
inline constexpr double kReconstruction = 1e-5;
inline constexpr double kCanReconstruction = 1e-6;
inline constexpr double kKmeansRelStop = 1e-6;
inline constexpr double kRankOneRatio = 1e-5;

// Metrics.
inline constexpr double kPsnrCapDb = 99.0;
inline constexpr double kPsnrMseFloor = 1e-10;
inline constexpr double kSamNormFloor = 1e-8;
inline constexpr double kErgasMeanFloor = 1e-8;
inline constexpr double kMetricOracle = 1e-6;

// Training.
inline constexpr double kOverfitL1 = 0.02;
inline constexpr int kOverfitSteps = 300;
inline constexpr int kSmoothingWindow = 20;

}  // namespace cgf::tol
