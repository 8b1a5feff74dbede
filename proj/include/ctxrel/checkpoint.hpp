#pragma once

#include <istream>
#include <ostream>
#include <string>

#include "ctxrel/model.hpp"

namespace ctxrel {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Field order is documented in docs/FORMATS.md.
void save_checkpoint(std::ostream& out, const Model& model);
Model load_checkpoint(std::istream& in);

void save_checkpoint_file(const std::string& path, const Model& model);
Model load_checkpoint_file(const std::string& path);

}  // namespace ctxrel
