"""Shared result container for all inference procedures."""

from dataclasses import dataclass, field

import numpy as np

# smallest reportable p-value; closed-form paths clip here so p stays in (0, 1]
P_FLOOR = float(np.finfo(float).tiny)


@dataclass
class TestResult:
    """Outcome of one hypothesis test.

    Fields
    ------
    test_id : short method name, e.g. "selective_t" or "naive_f".
    statistic : observed test statistic.
    p_value : in (0, 1]; Monte-Carlo paths use the add-one rule
        (1 + #extreme) / (n + 1) so 0 is unattainable, closed-form paths
        clip at P_FLOOR.
    reference : description of the reference distribution, a dict with a
        "kind" key ("mc", "trunc_normal", "trunc_f", "t", or "f") plus
        kind-specific entries (sample counts, truncation bounds, df).
    null_spec : the tested null, e.g. {"theta0": 0.0} or {"beta0": 0.0}.
    diagnostics : free-form map (acceptance rates, degeneracy flags, ...).
    """

    test_id: str
    statistic: float
    p_value: float
    reference: dict
    null_spec: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.statistic = float(self.statistic)
        self.p_value = float(min(max(self.p_value, P_FLOOR), 1.0))

    def to_dict(self):
        """JSON-friendly representation."""
        return {
            "test_id": self.test_id,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "reference": _jsonable(self.reference),
            "null_spec": _jsonable(self.null_spec),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        # strict JSON has no Infinity/NaN literal
        return repr(obj)
    return obj
