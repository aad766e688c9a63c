#pragma once

namespace nsdesk {

// Keeps large freed blocks in the heap instead of returning them to the
// kernel. Training allocates and frees the same activation sizes every step,
// and without this each step pays fresh page faults. No-op outside glibc.
void tune_process_allocator();

}  // namespace nsdesk
