from __future__ import annotations

import numpy as np
import pytest

ACCEPTANCE_RESULTS: dict[str, list[tuple[bool, str]]] = {}


def random_mask(rng: np.random.Generator, max_dim: int = 16, min_dim: int = 3) -> np.ndarray:
    """Random 3D mask mixing sparse noise and solid boxes, so both isolated voxels
    and thick regions (where erosion survives) show up."""
    dims = tuple(int(d) for d in rng.integers(min_dim, max_dim + 1, size=3))
    kind = rng.integers(3)
    if kind == 0:
        return rng.random(dims) < rng.uniform(0.05, 0.6)
    mask = np.zeros(dims, dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        lo = [int(rng.integers(0, d)) for d in dims]
        hi = [int(rng.integers(l + 1, d + 1)) for l, d in zip(lo, dims)]
        mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
    if kind == 2:
        mask ^= rng.random(dims) < 0.05
    return mask


def random_pair(rng: np.random.Generator, max_dim: int = 16):
    """A (prob, gt) pair with a non-empty lesion."""
    gt = random_mask(rng, max_dim)
    if not gt.any():
        gt[tuple(int(rng.integers(0, d)) for d in gt.shape)] = True
    prob = np.clip(gt * rng.uniform(0.3, 1.0) + rng.normal(0, 0.25, gt.shape), 0, 1)
    # sprinkle exact threshold hits to exercise the strict inequality
    prob[rng.random(gt.shape) < 0.03] = 0.5
    return prob, gt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Register an acceptance criterion; its pass/fail line is printed in the summary.

    Call it first thing in the test with the criterion name; it returns a list
    the test can append measured details to.
    """
    registered = []

    def register(name: str) -> list[str]:
        details: list[str] = []
        registered.append((name, details))
        return details

    yield register
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    for name, details in registered:
        ACCEPTANCE_RESULTS.setdefault(name, []).append((ok, "; ".join(details)))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda n: int(n.split()[0])):
        parts = ACCEPTANCE_RESULTS[name]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts if p[1])
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}  {detail}".rstrip())
