#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pflow/model_params.hpp"
#include "pflow/types.hpp"

namespace pflow {

/// Index-matched mean position error in millimeters; particle i of pred is
/// compared against particle i of gt.
double avg_pos_error_mm(std::span<const Vec3> pred, std::span<const Vec3> gt);

/// Sequence distance for one frame: mean over ground-truth particles of the
/// distance to the *nearest* predicted particle, in millimeters. Exact
/// (grid-accelerated with an expanding-shell search).
double seq_distance_mm(std::span<const Vec3> gt, std::span<const Vec3> pred);

/// Exact minimal-cost assignment of an n x n cost matrix (row-major).
double hungarian_assignment_cost(const std::vector<double>& cost, int n);

/// W1 distance between the two clouds under Euclidean ground cost and
/// uniform weights, in millimeters: exact assignment for clouds up to
/// max_points, deterministic seeded subsample to max_points above that.
double wasserstein_mm(std::span<const Vec3> pred, std::span<const Vec3> gt, std::uint64_t seed,
                      int max_points = 256);

/// SPH summation density per particle (cubic spline, smoothing length 2h,
/// support 4h, self included, fluid only).
std::vector<float> density(std::span<const Vec3> positions, const SimConfig& cfg);

/// e = |1 - max rho(pred) / max rho(gt)|.
double max_density_error(std::span<const Vec3> pred, std::span<const Vec3> gt,
                         const SimConfig& cfg);

struct FrameMetrics {
    int frame = 0;
    double index_error_mm = 0;   // index-matched error against gt
    double seq_distance_mm = 0;  // Eq. nearest-prediction distance
    double wasserstein_mm = 0;
    double density_error = 0;
};

struct EvalReport {
    double avg_pos_error_t1_mm = 0;
    double avg_pos_error_t2_mm = 0;
    double seq_distance_dn_mm = 0;   // mean over frames
    double wasserstein_mm = 0;       // mean over frames
    double max_density_error = 0;    // max over frames
    std::uint64_t emd_subsample_seed = 0;
    std::vector<FrameMetrics> frames;
};

/// Frame-aligned comparison of two stored sequences (frame k of pred
/// against frame k of gt, over the common prefix). The t+1/t+2 summary
/// errors are the index-matched errors at frames 1 and 2.
EvalReport eval_sequences(const FrameSequence& pred, const FrameSequence& gt,
                          const SimConfig& cfg, std::uint64_t emd_seed);

/// Model-in-the-loop short-horizon protocol: initialize from every
/// `stride`-th ground-truth frame, run two steps, and average the
/// index-matched errors at horizons t+1 and t+2 (millimeters).
void eval_model_short_horizon(const ModelParams& model, const FrameSequence& gt,
                              const SimConfig& cfg, int stride, double& t1_mm, double& t2_mm);

/// `metric,frame,value` rows; summary metrics use frame -1.
std::string report_csv(const EvalReport& r);
/// JSON summary including the subsample seed.
std::string report_json(const EvalReport& r);

}  // namespace pflow
