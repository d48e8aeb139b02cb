import numpy as np
import pytest

from throttle_lift.records import Records
from throttle_lift.sim import CampaignConfig, run_campaign


def make_records(p, z, d, y, interval=None, weight=None, e=None):
    n = len(z)
    z = np.asarray(z)
    return Records(
        unit_id=np.arange(n),
        interval=np.zeros(n, dtype=int) if interval is None else interval,
        p=np.broadcast_to(np.asarray(p, dtype=float), (n,)).copy(),
        z=z,
        d=d,
        y=y,
        e=np.zeros(n) if e is None else e,
        competitor_bid=np.full(n, np.nan),
        weight=weight,
    )


@pytest.fixture(scope="session")
def default_run():
    return run_campaign(CampaignConfig(seed=11))
