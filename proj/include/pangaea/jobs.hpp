#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "pangaea/io.hpp"
#include "pangaea/triplet.hpp"

namespace pangaea {

// Command names accepted by run_job, in usage order.
const std::vector<std::string>& job_commands();

// request: {"command": <name>, ...command fields}. Returns the result object.
// Failures raise pangaea::Error.
nlohmann::json run_job(const nlohmann::json& request);

struct LoadedDataset {
  ModalityKind modality = ModalityKind::Table;
  std::vector<Sample> samples;
  std::vector<double> labels;
  std::size_t label_width = 0;
};

// Data spec forms (all take "modality"):
//   {"synthetic": {...SynthSpec fields, "seed"}}
//   {"csv": path, "label_column": name, "categorical": [names]}   table only
//   {"samples": path.pgt, "labels": path.pgt}                     leading dim is the sample count
//   {"series": path.pgt, "stride": n}                              one long series, framed
//   {"points": path.pgt, "groups": g, "group_size": k}             [N, S, 3] raw clouds
LoadedDataset load_dataset(const nlohmann::json& spec);

}  // namespace pangaea
