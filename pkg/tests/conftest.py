import pytest

# criterion number -> list of (ok, detail) parts recorded by the acceptance tests
CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` records one part of acceptance criterion ``n``."""
    def record(n: int, ok: bool, detail: str) -> None:
        CRITERIA.setdefault(n, []).append((bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {n:2d} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        parts = CRITERIA[n]
        ok = all(p for p, _ in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:2d} " + "; ".join(d for _, d in parts))
