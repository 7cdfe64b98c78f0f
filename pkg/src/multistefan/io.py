"""Number formatting shared by the CSV writers."""

import math


def fmt(x) -> str:
    """17 significant digits, enough to round-trip an IEEE double."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")
