#pragma once

#include <string>
#include <vector>

#include "sgt/stepper.hpp"

namespace sgt {

// Binary snapshot format, little-endian throughout:
//   magic "SGTV1\0", u8 model, u64 n, f64 t,
//   four n^2 f64 arrays row-major (field, flow_w1, flow_w2, det_check),
//   five f64 monitors (nu_sup, convexity_min, step_increment, det_err, mass),
//   u64 FNV-1a checksum of every preceding byte.
// Writes are atomic (temp file + rename). Reads verify the checksum before
// trusting any value. flow_inv is not stored; read_snapshot rebuilds it by
// inverting the stored flow, so it matches the written state only to the
// map-inversion tolerance.
void write_snapshot(const StepState& state, const std::string& path);
StepState read_snapshot(const std::string& path);

// Serialized bytes of a state, exactly what write_snapshot puts on disk.
std::string snapshot_bytes(const StepState& state);

// Sup and mean absolute differences, one entry per stored array.
struct ArrayDiff {
    double sup = 0.0;
    double mean_abs = 0.0;
};
struct SnapshotDiff {
    ArrayDiff field;
    ArrayDiff flow_w1;
    ArrayDiff flow_w2;
    ArrayDiff det_check;
    double t_abs = 0.0; // |t_a - t_b|
};
SnapshotDiff snapshot_diff(const StepState& a, const StepState& b);

// Monitor series as CSV with the fixed header
// "step,t,det_err,convexity_min,nu_sup,increment,mass", values at 17
// significant digits.
std::string render_monitor_csv(const std::vector<StepRecord>& series);
void write_monitor_csv(const std::vector<StepRecord>& series, const std::string& path);

} // namespace sgt
