#pragma once

#include "ctlgan/config.hpp"
#include "ctlgan/perceptual.hpp"

#include <exception>
#include <iosfwd>
#include <memory>

namespace ctlgan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitInvalidData = 4;

/// Process exit code for an exception escaping a command.
int exit_code_for(const std::exception& error);

/// "toy" builds the seeded toy backbone; anything else is read as a backbone checkpoint.
std::shared_ptr<FeatureBackbone> load_backbone(const std::string& name, int64_t image_channels);

// Each command reads the paths it needs from `cfg`, writes artifacts under cfg.paths.out and
// appends JSON log lines to <out>/log.jsonl. Progress notes go to `log`.
void cmd_train_encoder(const RunConfig& cfg, std::ostream& log);
void cmd_adapt(const RunConfig& cfg, std::ostream& log);
void cmd_stylize(const RunConfig& cfg, std::ostream& log);
void cmd_invert(const RunConfig& cfg, std::ostream& log);
void cmd_sample(const RunConfig& cfg, std::ostream& log);
void cmd_evaluate(const RunConfig& cfg, std::ostream& log);
void cmd_toy_data(const RunConfig& cfg, std::ostream& log);
void cmd_pretrain_toy(const RunConfig& cfg, std::ostream& log);

/// Dispatches on cfg.stage and converts failures to exit codes (message written to `err`).
int run_stage(const RunConfig& cfg, std::ostream& log, std::ostream& err);

}  // namespace ctlgan
