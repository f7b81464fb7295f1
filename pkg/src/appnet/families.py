"""Reducible operator families for anchor-mediated feature exchange.

A family is a triple of maps (push_map, pull_map, combine) plus the fused
direct map they factorize. Writing u for the push-side argument and v for the
pull-side argument (both images of a shared linear relation transform), every
family satisfies

    combine(push_map(u), pull_map(v)) == direct_map(u + v)

exactly in real arithmetic. In the aggregation operator u = W(phi_x - phi_a)
and v = W(phi_a - phi_y), so u + v = W(phi_x - phi_y): the anchor a cancels
and the combined relation depends on the two endpoints only.

Families:

  linear       direct w            combine a + b         1 component
  exponential  direct e^w          combine a * b         1 component
  cosine       direct cos(w)       combine a0*b0 - a1*b1 components (cos, sin)
  sine         direct sin(w)       combine a0*b1 + a1*b0 components (sin, cos)

Because v = -u whenever both sides reference the same point, the pull
components are recoverable from the already-computed push components without
touching the relation transform again (:func:`pull_from_push`): negation for
linear, reciprocal for exponential, sign flips on the odd component for the
trigonometric pairs.

All maps accept plain numpy arrays or autodiff tensors. Exponential arguments
are guarded at |u| <= 30 and raise instead of saturating: any clamp would
break the exact cancellation these identities exist to provide.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .tensor import Tensor

EXP_ARG_LIMIT = 30.0


class OverflowGuardError(ValueError):
    """Exponential-family argument left the guarded range."""


class Family(str, Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exp"
    SINE = "sin"
    COSINE = "cos"


def component_count(family: Family) -> int:
    return 1 if family in (Family.LINEAR, Family.EXPONENTIAL) else 2


def _raw(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def _sin(x):
    return x.sin() if isinstance(x, Tensor) else np.sin(x)


def _cos(x):
    return x.cos() if isinstance(x, Tensor) else np.cos(x)


def _guard_exp(u) -> None:
    vals = _raw(u)
    if vals.size and float(np.abs(vals).max()) > EXP_ARG_LIMIT:
        raise OverflowGuardError(
            f"exponential argument magnitude {np.abs(vals).max():.3g} exceeds {EXP_ARG_LIMIT}"
        )


def push_map(family: Family, u) -> tuple:
    """Map a push-side relation argument to its exchange components."""
    if family == Family.LINEAR:
        return (u,)
    if family == Family.EXPONENTIAL:
        _guard_exp(u)
        return (_exp(u),)
    if family == Family.COSINE:
        return (_cos(u), _sin(u))
    if family == Family.SINE:
        return (_sin(u), _cos(u))
    raise ValueError(f"unknown family {family!r}")


def pull_map(family: Family, v) -> tuple:
    """Pull-side components computed fresh; same functional form as the push."""
    return push_map(family, v)


def pull_from_push(family: Family, components: tuple) -> tuple:
    """Pull components for argument -u given the push components for u.

    linear       (a,)    -> (-a,)
    exponential  (a,)    -> (1/a,)
    cosine       (a0,a1) -> (a0, -a1)
    sine         (a0,a1) -> (-a0, a1)
    """
    if family == Family.LINEAR:
        return (-components[0],)
    if family == Family.EXPONENTIAL:
        return (1.0 / components[0],)
    if family == Family.COSINE:
        return (components[0], -components[1])
    if family == Family.SINE:
        return (-components[0], components[1])
    raise ValueError(f"unknown family {family!r}")


def combine(family: Family, push_components: tuple, pull_components: tuple):
    """Fuse push and pull components; elementwise and bilinear per component,
    so it commutes with block averaging of the push side."""
    a, b = push_components, pull_components
    if family == Family.LINEAR:
        return a[0] + b[0]
    if family == Family.EXPONENTIAL:
        return a[0] * b[0]
    if family == Family.COSINE:
        return a[0] * b[0] - a[1] * b[1]
    if family == Family.SINE:
        return a[0] * b[1] + a[1] * b[0]
    raise ValueError(f"unknown family {family!r}")


def direct_map(family: Family, w):
    """The fused relation map applied to the total argument."""
    if family == Family.LINEAR:
        return w
    if family == Family.EXPONENTIAL:
        _guard_exp(w)
        return _exp(w)
    if family == Family.COSINE:
        return _cos(w)
    if family == Family.SINE:
        return _sin(w)
    raise ValueError(f"unknown family {family!r}")
