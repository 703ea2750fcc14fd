"""Integer-microsecond time helpers.

All simulator clocks run in integer microseconds so that values such as the
35.84 ms beacon header interval are exact.
"""

US_PER_MS = 1000


def ms(value: float) -> int:
    """Convert milliseconds to integer microseconds (round half up)."""
    return int(round(value * US_PER_MS))


def to_ms(value_us: float) -> float:
    return value_us / US_PER_MS


def overlaps(a_start: int, a_end: int, b_start: int, b_end: int) -> bool:
    """Half-open interval overlap test."""
    return a_start < b_end and b_start < a_end
