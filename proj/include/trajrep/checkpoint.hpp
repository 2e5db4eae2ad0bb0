#pragma once

#include <string>

#include "trajrep/model.hpp"

namespace trajrep {

// Versioned binary container: config snapshot, model variant, every named
// parameter tensor (shape header + little-endian IEEE-754 doubles), optional
// Adam moments, and the optimizer step counter that seeds per-step RNG
// streams. save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const Model& model, bool with_optimizer = true);

// Restores parameters into a model built from the checkpoint's own config.
// Throws std::runtime_error on corrupt files or version mismatch; shape or
// name mismatches against the model report the offending parameter.
void load_checkpoint(const std::string& path, Model& model);

// Reads only the config snapshot and variant, for constructing a compatible
// model before loading.
RunConfig peek_checkpoint(const std::string& path, Variant& variant_out);

}  // namespace trajrep
