#pragma once

#include <stdexcept>
#include <string>

namespace interlab {

// Machine-readable failure categories. Every throw in the library goes
// through fail() so callers can switch on kind() instead of parsing text.
enum class errc {
  capacity,        // vocabulary cannot host the requested facts
  fraction,        // split fractions invalid
  pool_exhausted,  // edit pool too small for the requested batches
  range,           // argument outside its documented domain
  empty_input,     // a non-empty collection was required
  shape,           // tensor/model shape mismatch
  divergence,      // training loss became non-finite
  rank,            // adapter rank exceeds an adapted dimension
  overlap,         // forget/retain sets intersect
  grid_mismatch,   // curve gamma grids are not aligned
  missing_backup,  // re-entry requested without a compression backup
  config,          // experiment configuration invalid or inconsistent
  io,              // file could not be read/written/parsed
};

const char* errc_name(errc kind);

class error : public std::runtime_error {
 public:
  error(errc kind, const std::string& what)
      : std::runtime_error(std::string(errc_name(kind)) + ": " + what),
        kind_(kind) {}
  errc kind() const noexcept { return kind_; }

 private:
  errc kind_;
};

[[noreturn]] inline void fail(errc kind, const std::string& what) {
  throw error(kind, what);
}

inline const char* errc_name(errc kind) {
  switch (kind) {
    case errc::capacity: return "capacity";
    case errc::fraction: return "fraction";
    case errc::pool_exhausted: return "pool_exhausted";
    case errc::range: return "range";
    case errc::empty_input: return "empty_input";
    case errc::shape: return "shape";
    case errc::divergence: return "divergence";
    case errc::rank: return "rank";
    case errc::overlap: return "overlap";
    case errc::grid_mismatch: return "grid_mismatch";
    case errc::missing_backup: return "missing_backup";
    case errc::config: return "config";
    case errc::io: return "io";
  }
  return "unknown";
}

}  // namespace interlab
