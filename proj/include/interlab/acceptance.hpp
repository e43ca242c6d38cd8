#pragma once

#include <iosfwd>

namespace interlab::accept {

// Runs the full acceptance suite, printing one pass/fail line per criterion
// (plus indented evidence lines). Returns the number of failed criteria.
int run_acceptance(std::ostream& out);

}  // namespace interlab::accept
