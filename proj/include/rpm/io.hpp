#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rpm/core.hpp"
#include "rpm/eval.hpp"
#include "rpm/model.hpp"
#include "rpm/render.hpp"
#include "rpm/train.hpp"

namespace rpm {

// Dataset files hold one JSON object per line. Rasters are not stored; each
// record carries the renderer version they must be regenerated with.
std::string task_to_line(const RpmTask& t);
// Throws kMalformedRecord or kVersionMismatch.
RpmTask task_from_line(std::string_view line);

void write_dataset(std::ostream& out, std::span<const RpmTask> tasks);
// Errors name the 1-based line.
std::vector<RpmTask> read_dataset(std::istream& in);
void save_dataset(const std::string& path, std::span<const RpmTask> tasks);
// Throws kMissingFile when the file cannot be opened.
std::vector<RpmTask> load_dataset(const std::string& path);

inline constexpr char kCheckpointMagic[4] = {'A', 'C', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string config_to_json(const ModelConfig& c);
ModelConfig config_from_json(std::string_view text);

// "ACT1", u32 version, u32-length-prefixed JSON config, u32 tensor count, then
// per tensor: u32-length-prefixed name, u32 rank, u32 dims, f32 data. All
// integers and floats little-endian.
void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

// Binary PGM (P5), 8-bit, row-major.
std::string pgm_bytes(const Raster& r);
void write_pgm(const std::string& path, const Raster& r);
Raster read_pgm(const std::string& path);

void write_metric_csv(std::ostream& out, const MetricReport& m);
void write_choice_csv(std::ostream& out, const ChoiceReport& c);
void write_audit_csv(std::ostream& out, const AuditReport& a);
void write_error_csv(std::ostream& out, const ErrorHistogram& h);
// One JSON object per task: chosen answers, distances, tie flag.
void write_dcm_records(std::ostream& out, std::span<const DcmRecord> records);

// Learning curves from an epoch-log CSV: percentage metrics on the left
// chart, weighted loss on the right, one polyline per split and metric.
std::string learning_curve_svg(std::istream& csv);

}  // namespace rpm
