"""Exact cost accounting for samples and oracle evaluations."""
from dataclasses import dataclass, fields


class DivergenceError(ArithmeticError):
    """Raised when an iterate becomes non-finite.

    Attributes carry where it happened; ``trace`` holds the last finite
    trace rows when raised from an outer loop.
    """

    def __init__(self, message, epoch=None, step=None, t=None, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.t = t
        self.trace = trace


@dataclass
class CostLedger:
    """Monotone counters.

    Counts are integers for a single run; :meth:`mean` produces a ledger of
    float averages.
    """

    xi_samples: int = 0
    eta_samples: int = 0
    g_grad_evals: int = 0
    g_hvp_evals: int = 0
    f_grad_evals: int = 0
    inner_iters: int = 0
    wall_nanos: int = 0

    def __add__(self, other):
        return CostLedger(*(getattr(self, f.name) + getattr(other, f.name)
                            for f in fields(self)))

    def __iadd__(self, other):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def merge(self, other):
        return self + other

    def copy(self):
        return CostLedger(**self.as_dict())

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __le__(self, other):
        return all(getattr(self, f.name) <= getattr(other, f.name) for f in fields(self))

    @classmethod
    def total(cls, ledgers):
        out = cls()
        for led in ledgers:
            out += led
        return out

    @classmethod
    def mean(cls, ledgers):
        ledgers = list(ledgers)
        tot = cls.total(ledgers)
        n = len(ledgers)
        return cls(*(getattr(tot, f.name) / n for f in fields(tot)))


FIELD_NAMES = tuple(f.name for f in fields(CostLedger))
