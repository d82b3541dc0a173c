import functools
import re

import numpy as np
import pytest

from ratecast.dataio import SplitSpec, generate_synthetic, split
from ratecast.factorization import TrainConfig, default_ensemble_members, train
from ratecast.ratings import MetricKind, quantize, thresholds_by_percentile

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+(?:\[[^\]]*\])?)")
_acceptance: dict[int, list[tuple[str, str, str]]] = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "measured")
        _acceptance.setdefault(int(match.group(1)), []).append((match.group(2), outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        for name, outcome, detail in _acceptance[number]:
            line = f"criterion {number:2d} {outcome}  {name}"
            terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


# Scenario shared by the network-scale checks: n=200, k=10 neighbor split,
# noise sd 5% of the value range, percentile quantization, default training.
SCENARIO_N = 200
SCENARIO_K = 10
SCENARIO_RANGE = (10.0, 500.0)
SCENARIO_SEEDS = (0, 1, 2, 3, 4)


@functools.lru_cache(maxsize=None)
def scenario(seed: int, metric: str = "rtt"):
    kind = MetricKind.parse(metric)
    lo, hi = SCENARIO_RANGE
    m = generate_synthetic(SCENARIO_N, 5, SCENARIO_RANGE, 0.05 * (hi - lo), kind, seed=seed)
    ratings = quantize(m, thresholds_by_percentile(m))
    train_part, test_part = split(ratings, SplitSpec("neighbor_k", k=SCENARIO_K, seed=seed))
    return m, train_part, test_part


@functools.lru_cache(maxsize=None)
def scenario_model(seed: int, kind: str, metric: str = "rtt"):
    _, train_part, _ = scenario(seed, metric)
    config = TrainConfig(seed=seed)
    if kind == "ensemble":
        return tuple(train(k, train_part, c).model for k, c in default_ensemble_members(config))
    return (train(kind, train_part, config).model,)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
