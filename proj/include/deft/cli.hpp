#ifndef DEFT_CLI_HPP
#define DEFT_CLI_HPP

#include <string>

#include "deft/config.hpp"

namespace deft {
namespace cli {

// Subcommand entry points. Each reads its settings from the config, writes a
// resolved-config sidecar next to its outputs, and returns a process exit
// code. Errors surface as exceptions; the binary turns them into one-line
// diagnostics.
int cmd_generate(KvConfig& cfg);
int cmd_train(KvConfig& cfg);
int cmd_anneal(KvConfig& cfg);
int cmd_evaluate(KvConfig& cfg);
int cmd_traverse(KvConfig& cfg);
int cmd_report(KvConfig& cfg);

}  // namespace cli
}  // namespace deft

#endif
