"""
A pocket fuzzing campaign
=========================

Twenty thousand generated payloads against the two in-process targets,
fully deterministic: the i-th iteration derives its payload seed from
the campaign seed, so the same command line always produces the same
corpus, byte for byte, whatever the worker count.

Outputs land in ./campaign-out: findings/<digest>/ directories with the
minimized payload plus metadata, a raw/ ring of pre-dedup hits, and
stats.json / report.txt.
"""

import json
import pathlib
import shutil

from picklediff import CampaignConfig, run_campaign
from picklediff.campaign_cli import replay

OUT = pathlib.Path("campaign-out")
if OUT.exists():
    shutil.rmtree(OUT)

config = CampaignConfig(
    seed=5,
    targets=("internal-pvm", "internal-disasm"),
    out_dir=str(OUT),
    max_iterations=20_000,
    workers=1,
)
stats = run_campaign(config)

print("executed  %d payloads in %.1fs (%.0f/s)" % (
    stats.payloads_executed, stats.elapsed_s, stats.throughput))
print("hits      %d error, %d storage" % (
    stats.error_discrepancy_hits, stats.storage_discrepancy_hits))
print("unique    %d signatures" % stats.unique_signatures)

# a peek at the three smallest findings
findings = sorted(
    OUT.joinpath("findings").iterdir(),
    key=lambda d: (d / "payload.pkl").stat().st_size,
)
for fdir in findings[:3]:
    meta = json.loads((fdir / "meta.json").read_text())
    payload = (fdir / "payload.pkl").read_bytes()
    print()
    print("finding %s" % fdir.name)
    print("  payload %r" % payload)
    print("  vector  %s" % (tuple(meta["outcome_vector"]),))

# every corpus payload replays with the same verdict, from disk alone
print()
code = replay(str(findings[0] / "payload.pkl"), ("internal-pvm", "internal-disasm"))
print("replay exit status: %d (1 = discrepancy reproduced)" % code)
