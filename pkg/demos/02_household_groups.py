"""
Players behind shared addresses
===============================

Several accounts can log in from one client IP. Grouping IPs by how
many distinct accounts they carry gives the group table; users who
ever shared an IP are labelled lion, the rest tiger.
"""

import tempfile
from pathlib import Path

import numpy as np

from mmotrace.pipeline import analyze
from mmotrace.synthgen import from_dict, generate

work = Path(tempfile.mkdtemp(prefix="mmotrace-demo-"))
scenario = from_dict({
    "duration_s": 4 * 3600,
    "seed": 3,
    "users": {
        "count": 40,
        "group_size_histogram": {"1": 20, "2": 6, "3": 2, "5": 1},
        "session_model": {"sessions_per_user_mean": 1.5,
                          "duration_lognormal": {"mu": 7.5, "sigma": 0.8}},
    },
    "movement": {"movement_hz": 0.5},
})
manifest = generate(scenario, work / "groups.pcap", work / "groups.manifest.json")
a = analyze(work / "groups.pcap")

print("size  n_ips  n_users  volume_share   (planted n_ips)")
planted = {g["size"]: g["n_ips"] for g in manifest.groups}
for row in a.groups.table:
    print(f"{row.size:>4}  {row.n_ips:5d}  {row.n_users:7d}  {row.volume_share:12.3f}   ({planted.get(row.size, 0)})")

# playing time per membership, split by class
deciles = np.arange(1, 10) / 10
for label in ("tiger", "lion"):
    cdf = a.cdfs[f"playing_user_all_{label}"]
    if len(cdf):
        q = np.quantile(cdf.values, deciles) / 3600
        print(label, "playing deciles (h):", np.round(q, 2))
