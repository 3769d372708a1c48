import pytest

_REPORT: list[str] = []


class CriterionReport:
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def line(self, label: str, ok: bool, detail: str = "") -> bool:
        text = f"{label}: {'PASS' if ok else 'FAIL'}"
        if detail:
            text += f"  ({detail})"
        _REPORT.append(text)
        print(text)
        return ok


@pytest.fixture
def report():
    return CriterionReport()


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for text in sorted(_REPORT, key=lambda t: int(t.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(text)
