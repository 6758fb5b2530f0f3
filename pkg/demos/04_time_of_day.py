"""
When do people play
===================

Playing time is binned into fixed time-of-day slots. Each row of the
matrix is one user; its cells add up to that user's playing time.
"""

import tempfile
from pathlib import Path

import numpy as np

from mmotrace.pipeline import analyze
from mmotrace.sessions import playing_time_us
from mmotrace.synthgen import from_dict, generate

work = Path(tempfile.mkdtemp(prefix="mmotrace-demo-"))
scenario = from_dict({
    "duration_s": 12 * 3600,
    "trace_start_epoch": 1218182400 + 8 * 3600,
    "seed": 9,
    "users": {"count": 15, "group_size_histogram": {"1": 9, "2": 3},
              "session_model": {"sessions_per_user_mean": 2,
                                "duration_lognormal": {"mu": 8.0, "sigma": 0.5}}},
    "movement": {"movement_hz": 0.2},
})
generate(scenario, work / "day.pcap", work / "day.manifest.json")
a = analyze(work / "day.pcap", slot_minutes=60)
m = a.timeofday

# column 0 is the slot holding the trace start (08:00 UTC here)
total = m.minutes.sum(axis=0)
for col, minutes in enumerate(total[:12]):
    print(f"{(8 + col) % 24:02d}:00  {'#' * int(minutes // 20)} {minutes:.0f} min")

# row sums equal playing time exactly, in integer microseconds
assert all(int(m.cells_us[i].sum()) == playing_time_us(a.users[t]) for i, t in enumerate(m.tokens))
print("busiest user:", m.tokens[int(np.argmax(m.cells_us.sum(axis=1)))][:8],
      "class", m.classes[int(np.argmax(m.cells_us.sum(axis=1)))])
