#ifndef DEFT_CHECKPOINT_HPP
#define DEFT_CHECKPOINT_HPP

#include <string>
#include <vector>

#include "deft/autograd.hpp"

namespace deft {

// Checkpoint container: magic "DEFTCKPT", u16 version, u32 entry count,
// then per parameter: name, shape, raw little-endian float32 values for the
// parameter and its Adam moments, and the u64 step count. Round-trips are
// byte-exact. See docs/formats.md.
void save_checkpoint(const std::string& path, const std::vector<Parameter<float>*>& params);
void load_checkpoint(const std::string& path, const std::vector<Parameter<float>*>& params);

}  // namespace deft

#endif
