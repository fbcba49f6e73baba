import json

import pytest

from earncall.config import SyntheticSpec
from earncall.synth import write_corpus

SMALL = dict(n_companies=12, transcripts_per_company=8, n_filler=60, seed=11)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 12-company synthetic corpus with a fast run config."""
    out = tmp_path_factory.mktemp("small")
    paths = write_corpus(SyntheticSpec(**SMALL), out)
    cfg = json.loads(open(paths.config).read())
    cfg.update(epochs=3, batch_size=8, hidden=[8], min_frequency=2)
    with open(paths.config, "w") as fh:
        json.dump(cfg, fh)
    return paths
