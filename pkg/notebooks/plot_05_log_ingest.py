"""
From a platform log to an estimate
==================================

Real logs list skipped auctions without saying why they were skipped.
Auctions with exactly the same competitors and bids as an entered one are
treated as throttled out, then reweighted to the count the throttle
implies.
"""

import tempfile
from pathlib import Path

from throttle_lift.dataio import impute_throttled_controls, ingest, parse_log, write_log
from throttle_lift.estimators import estimate_late
from throttle_lift.sim import CampaignConfig, run_campaign

run = run_campaign(CampaignConfig(seed=3))
path = Path(tempfile.mkdtemp()) / "log.csv"
write_log(run, path)
print(path.read_text().splitlines()[:3])

###############################################################################
# Matching: one set per competitor key that the campaign entered at least once.

sets = impute_throttled_controls(parse_log(path))
print(f"{len(sets)} matched sets, {sum(len(s.controls) for s in sets)} controls")

###############################################################################
# Weighted estimate on the ingested records against the full simulated data.

rec = ingest(path)
print(f"ingested : {estimate_late(rec, weighted=True).tau_hat:.4f}")
print(f"full data: {estimate_late(run.records).tau_hat:.4f}")
