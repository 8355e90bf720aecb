#pragma once

#include <functional>
#include <string_view>

namespace loghive {

// Step boundaries on the write, seal, and evict paths. A test hook installed
// in VaultOptions / Archiver is invoked at each one and may throw to simulate
// the process dying there.
enum class FaultPoint {
  journal_torn_write,   // half of a journal frame is on disk
  journal_appended,     // full frame on disk, receipt not yet returned
  segment_tmp_written,  // sealed bytes in seg-*.iotl.tmp
  segment_renamed,      // seg-*.iotl in place, journal not yet reset
  journal_reset,        // journal rewritten with the new base sequence
  archive_stored,       // sink holds the segment, manifest not yet updated
  archive_recorded,     // manifest entry durable, vault copy not yet deleted
  segment_evicted,      // vault copy deleted
};

std::string_view to_string(FaultPoint p);

using FaultHook = std::function<void(FaultPoint)>;

}  // namespace loghive
