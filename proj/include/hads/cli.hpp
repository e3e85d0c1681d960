#pragma once

namespace hads {

/// Entry point of the `hadsnet` command-line tool. Exit codes: 0 success,
/// 2 usage or configuration error, 3 data error, 4 numeric, state or
/// dimension error. Failures print one `error: kind=<kind> message=<text>`
/// line on stderr.
int run_cli(int argc, char** argv);

}  // namespace hads
