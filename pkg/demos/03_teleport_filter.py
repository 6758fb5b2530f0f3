"""
Teleports and the speed filter
==============================

Some avatars occasionally jump far in one movement update. Those steps
inflate the naive mean speed. The filter drops steps faster than a
multiple of the median step speed and recovers the walking speed.
"""

import tempfile
from pathlib import Path

from mmotrace import analytics as an
from mmotrace.pipeline import analyze
from mmotrace.synthgen import from_dict, generate

work = Path(tempfile.mkdtemp(prefix="mmotrace-demo-"))
scenario = from_dict({
    "duration_s": 1200,
    "seed": 5,
    "users": {"count": 50, "group_size_histogram": {"1": 50},
              "session_model": {"fixed_sessions": [[60, 1140]]}},
    "movement": {"teleport_avatar_fraction": 0.04, "teleport_speed_factor": 1000},
})
manifest = generate(scenario, work / "tele.pcap", work / "tele.manifest.json")
a = analyze(work / "tele.pcap")

print("walk speed planted  ", manifest.speed["walk_speed_wm_s"], "Wm/s")
print("mean speed unfiltered", round(an.mean_avatar_speed(a.raw_paths, filtered=False), 3))
print("mean speed filtered  ", round(an.mean_avatar_speed(a.paths), 3))
print("affected avatars     ", len(a.teleport.affected), "of", a.teleport.n_avatars,
      "(planted", manifest.speed["teleport_avatars"], ")")

# the threshold moves with the factor; a huge factor keeps every step
for factor in (10, 100, 1e9):
    paths, rep = an.teleport_filter(a.raw_paths, factor)
    print(f"factor {factor:>8g}: threshold {rep.threshold:10.1f} Wm/s, "
          f"mean {an.mean_avatar_speed(paths):7.3f}, affected {len(rep.affected)}")
