"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES = []


def record(criterion: str, passed: bool, detail: str = "") -> bool:
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
    LINES.append(line)
    print(line)
    return passed
