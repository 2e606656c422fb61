"""Module for the positive/negative loss weight scheduler"""


def schedule_alpha(p: float, t: int) -> float:
    """
    Weight of the complementary (negative feedback) loss at step `t`.

    alpha = 1 - p**t, so t=0 trains on positive feedback only and the weight
    approaches 1 as training proceeds.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"scheduler p must lie in (0, 1), got {p}")
    if t < 0:
        raise ValueError(f"scheduler step must be >= 0, got {t}")
    return 1.0 - p**t
