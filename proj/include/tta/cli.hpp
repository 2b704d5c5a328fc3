#pragma once

#include <iosfwd>

namespace tta::cli {

/// Runs one subcommand (vocab, train, score, rerank, sts, bench). Returns
/// the process exit status; every failure is reported as a single line on
/// `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tta::cli
