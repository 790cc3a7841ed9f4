import pytest

ACCEPTANCE = {
    1: "distance transform matches all-pairs oracle",
    2: "soft-boundary contract",
    3: "dynamic loss",
    4: "metrics",
    5: "pipeline identity",
    6: "power analysis",
    7: "channel-policy ordering at desk scale",
    8: "edge-error concentration",
    9: "determinism",
    10: "outlier flagging",
}

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records criterion ``n`` and asserts it."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(n: int, ok: bool, detail: str = ""):
        store[n] = (bool(ok), detail)
        assert ok, f"acceptance {n} ({ACCEPTANCE[n]}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_VERDICTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in ACCEPTANCE.items():
        if n not in store:
            terminalreporter.write_line(f"[ -- ] {n:2d}. {name}: not run")
            continue
        ok, detail = store[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
