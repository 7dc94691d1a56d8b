"""Drive pulse envelopes and modulated coefficients.

A pulse drives one qubit operator (phase or charge) with the scalar
coefficient

    c(t) = E(t - delay) * cos(omega_d * t + phase),

where the envelope ``E`` depends on ``pulse_type``:

* ``cos``      E(t) = amp/2 * (1 - cos(2*pi*t/length))
* ``rampcos``  raised-cosine ramps of duration ``ramp`` at both ends with a
               flat plateau in between; ``ramp`` defaults to length/2, which
               makes it identical to ``cos``.

Coefficients accept complex times: the higher-order splitting schemes sample
drives at complex virtual clock points, so the envelope is evaluated by
analytic continuation inside the pulse window (branch selected by Re t).
"""

from __future__ import annotations

import numpy as np

PULSE_TYPES = ("cos", "rampcos")
OPERATOR_TYPES = ("phi_operator", "n_operator")

# differentiable pulse parameters; length/delay move the evolution window and
# are treated as structural
GRAD_FIELDS = ("amp", "omega_d", "phase")


def _cos_envelope(t, amp, length):
    return amp / 2.0 * (1.0 - np.cos(2.0 * np.pi * t / length))


def _rampcos_envelope(t, amp, length, ramp):
    tr = np.real(t)
    if tr < ramp:
        return amp / 2.0 * (1.0 - np.cos(np.pi * t / ramp))
    if tr > length - ramp:
        return amp / 2.0 * (1.0 - np.cos(np.pi * (length - t) / ramp))
    return amp + 0.0 * t


class PulseCoefficient:
    """Time-dependent scalar coefficient of one drive term.

    Exposes the value and its derivatives with respect to the differentiable
    pulse parameters (amp, omega_d, phase).
    """

    def __init__(self, amp, omega_d, phase, length, delay=0.0,
                 pulse_type="cos", ramp=None):
        if pulse_type not in PULSE_TYPES:
            raise ValueError(f"unknown pulse_type {pulse_type!r}")
        if length <= 0:
            raise ValueError("pulse length must be > 0")
        if delay < 0:
            raise ValueError("pulse delay must be >= 0")
        self.amp = float(amp)
        self.omega_d = float(omega_d)
        self.phase = float(phase)
        self.length = float(length)
        self.delay = float(delay)
        self.pulse_type = pulse_type
        self.ramp = float(ramp) if ramp is not None else self.length / 2.0

    @property
    def end(self):
        return self.delay + self.length

    def _inside(self, t):
        tr = np.real(t)
        return self.delay <= tr <= self.end

    def envelope(self, t, amp=None):
        amp = self.amp if amp is None else amp
        if not self._inside(t):
            return 0.0 * t
        ts = t - self.delay
        if self.pulse_type == "cos":
            return _cos_envelope(ts, amp, self.length)
        return _rampcos_envelope(ts, amp, self.length, self.ramp)

    def __call__(self, t):
        return self.envelope(t) * np.cos(self.omega_d * t + self.phase)

    def derivative(self, t, field):
        """d c(t) / d field for field in GRAD_FIELDS."""
        if field == "amp":
            # envelope is linear in amp
            return self.envelope(t, amp=1.0) * np.cos(self.omega_d * t + self.phase)
        if field == "omega_d":
            return -self.envelope(t) * np.sin(self.omega_d * t + self.phase) * t
        if field == "phase":
            return -self.envelope(t) * np.sin(self.omega_d * t + self.phase)
        raise KeyError(f"pulse field {field!r} is not differentiable")
