#pragma once

#include <stdexcept>
#include <string>

namespace distgap {

enum class Errc {
  InvalidArgument,
  InnerOptimizerDiverged,
  UnboundedHessian,
  AsymmetricMatrix,
  NegativeEntry,
  NonzeroDiagonal,
  GridTooLarge,
  CflViolation,
  NonconvergentNewton,
  SupportEscapesGrid,
  PicardStalled,
  MarginalEscape,
  QuadratureSupportError,
  PicardDiverged,
  RegressionIllConditioned,
  NonfiniteCost,
  BlowUp,
  ConfigMismatch,
  NonProductFlow,
  DimensionMismatch,
  GridMismatch,
  FieldEvaluationError,
  DegenerateSample,
  MissingBound,
  NotQuadratic,
  NotDoublyStochastic,
  MissingLionsBounds,
  QuadratureDimCap,
  NonQuadraticLagrangian,
  RiccatiBlowUp,
  NonGaussianInitial,
  NonLqFunctional,
  NoFullInfoRoute,
  GapsBelowNoise,
  AsymmetricProblem,
  SchemaError,
  BadParameterPath,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::InnerOptimizerDiverged: return "InnerOptimizerDiverged";
    case Errc::UnboundedHessian: return "UnboundedHessian";
    case Errc::AsymmetricMatrix: return "AsymmetricMatrix";
    case Errc::NegativeEntry: return "NegativeEntry";
    case Errc::NonzeroDiagonal: return "NonzeroDiagonal";
    case Errc::GridTooLarge: return "GridTooLarge";
    case Errc::CflViolation: return "CflViolation";
    case Errc::NonconvergentNewton: return "NonconvergentNewton";
    case Errc::SupportEscapesGrid: return "SupportEscapesGrid";
    case Errc::PicardStalled: return "PicardStalled";
    case Errc::MarginalEscape: return "MarginalEscape";
    case Errc::QuadratureSupportError: return "QuadratureSupportError";
    case Errc::PicardDiverged: return "PicardDiverged";
    case Errc::RegressionIllConditioned: return "RegressionIllConditioned";
    case Errc::NonfiniteCost: return "NonfiniteCost";
    case Errc::BlowUp: return "BlowUp";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::NonProductFlow: return "NonProductFlow";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::FieldEvaluationError: return "FieldEvaluationError";
    case Errc::DegenerateSample: return "DegenerateSample";
    case Errc::MissingBound: return "MissingBound";
    case Errc::NotQuadratic: return "NotQuadratic";
    case Errc::NotDoublyStochastic: return "NotDoublyStochastic";
    case Errc::MissingLionsBounds: return "MissingLionsBounds";
    case Errc::QuadratureDimCap: return "QuadratureDimCap";
    case Errc::NonQuadraticLagrangian: return "NonQuadraticLagrangian";
    case Errc::RiccatiBlowUp: return "RiccatiBlowUp";
    case Errc::NonGaussianInitial: return "NonGaussianInitial";
    case Errc::NonLqFunctional: return "NonLqFunctional";
    case Errc::NoFullInfoRoute: return "NoFullInfoRoute";
    case Errc::GapsBelowNoise: return "GapsBelowNoise";
    case Errc::AsymmetricProblem: return "AsymmetricProblem";
    case Errc::SchemaError: return "SchemaError";
    case Errc::BadParameterPath: return "BadParameterPath";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace distgap
