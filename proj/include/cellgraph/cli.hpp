#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cellgraph {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // a stage raised an error
inline constexpr int kExitUsage = 2;    // bad or missing arguments

/// Runs the `cellgraph` command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

/// Static SVG bar chart, one bar per label, values on a fixed [0, 1] axis.
/// NaN values are drawn as a gap marked "n/a".
std::string render_bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<double>& values);

}  // namespace cellgraph
