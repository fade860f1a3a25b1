"""Integer-cent money arithmetic.

All engine-internal money values are integer cents so that schedule lookups
and income identities are bit-exact. Euros appear only at the I/O boundary.
"""

WEEKS_PER_YEAR = 52
MONTHS_PER_YEAR = 12


def round_div(n: int, d: int) -> int:
    """n / d rounded half away from zero. d must be positive."""
    if d <= 0:
        raise ValueError(f"divisor must be positive, got {d}")
    n = int(n)
    if n >= 0:
        return (2 * n + d) // (2 * d)
    return -((-2 * n + d) // (2 * d))


def cents(euros: float) -> int:
    """Euros to integer cents, half away from zero."""
    scaled = euros * 100.0
    if scaled >= 0:
        return int(scaled + 0.5)
    return -int(-scaled + 0.5)


def euros(c: int) -> float:
    return c / 100.0


def weekly_to_monthly(c: int) -> int:
    """Weekly cents to monthly cents via the uniform x52/12 factor."""
    return round_div(c * WEEKS_PER_YEAR, MONTHS_PER_YEAR)


def weekly_to_annual(c: int) -> int:
    return c * WEEKS_PER_YEAR


def annual_to_monthly(c: int) -> int:
    return round_div(c, MONTHS_PER_YEAR)


def annual_to_weekly(c: int) -> int:
    return round_div(c, WEEKS_PER_YEAR)
