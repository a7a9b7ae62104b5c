"""Collects acceptance verdict lines so the terminal summary can repeat them."""

LINES: list[str] = []


def record(line: str) -> None:
    LINES.append(line)
