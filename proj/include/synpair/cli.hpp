#pragma once

#include "synpair/evalkit.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace synpair {

/// Every configurable value of a run. Files hold `key = value` lines.
struct RunConfig {
  DatasetSpec data;
  TrainConfig train;
  LinearEvalConfig probe;

  std::string data_dir = "data";  // relative to --out unless absolute
  std::string manifest;           // empty = <data_dir>/manifest.csv
  std::string checkpoint;         // empty = <out>/checkpoint.bin
  std::string decoder_checkpoint; // empty = <out>/decoder.bin when present
  bool resume = true;

  std::vector<double> label_fractions = {1.0, 0.5, 0.2};
  int export_count = 16;
  std::uint64_t export_seed = 0;

  std::string sweep;  // e.g. "nu=0,0.1,0.5,1.0;noise_mode=both,lowvar_only"
  int sweep_replicates = 1;

  void validate() const;
};

/// Names of all accepted keys, in echo order.
std::vector<std::string> config_keys();

/// Applies one `key = value` assignment. Unknown keys and unparsable values
/// raise ConfigError.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Parses config text on top of `base`. `origin` names the source in errors.
RunConfig parse_config(const std::string& text, const RunConfig& base = {}, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path, const RunConfig& base = {});

/// Canonical text of every key; parse_config(echo_config(c)) reproduces c.
std::string echo_config(const RunConfig& cfg);

/// Applies `key=value` overrides after the file.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

/// One sweep axis: key and its values.
struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};
std::vector<SweepAxis> parse_sweep(const std::string& spec);

/// Runs a command. Returns the exit status: 0 ok, 1 config, 2 data,
/// 3 numeric, 4 I/O. Errors are reported on `err` as one line:
/// `error[<category>]: <message>`.
int run_command(const std::string& command, const std::string& config_path, const std::string& out_dir,
                const std::vector<std::string>& overrides, std::ostream& log, std::ostream& err);

/// Command-line entry point (argument parsing plus run_command).
int run_cli(int argc, const char* const* argv, std::ostream& log, std::ostream& err);

}  // namespace synpair
