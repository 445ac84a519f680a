"""Discrete-time simulators for the pendulum, cartpole and three-tank plants.

The step functions are pure and vectorised over leading axes: a state array
of shape ``(..., n_states)`` and an input of matching leading shape advance
together, which lets a whole GA population be rolled out in one call.  The
:class:`Plant` wrappers hold the live state of one controlled system and
provide snapshot/restore so the same object can double as a perfect
prediction model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, SimulationError

__all__ = [
    "PendulumParams",
    "CartpoleParams",
    "ThreeTankParams",
    "pendulum_step",
    "cartpole_accel",
    "cartpole_step",
    "tank_flows",
    "tank_rates",
    "tank_step",
    "Plant",
    "Pendulum",
    "Cartpole",
    "ThreeTank",
    "StateBlob",
    "make_plant",
    "PLANT_KINDS",
]


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _all_finite(*values):
    return all(math.isfinite(float(v)) for v in values)


@dataclass(frozen=True)
class PendulumParams:
    m: float = 1.0
    l: float = 1.0
    b: float = 0.1
    g: float = 9.81
    tau: float = 0.05

    def __post_init__(self):
        _require(_all_finite(*asdict(self).values()), "pendulum parameters must be finite")
        _require(self.m > 0, f"pendulum mass must be > 0, got {self.m}")
        _require(self.l > 0, f"pendulum length must be > 0, got {self.l}")
        _require(self.b >= 0, f"pendulum friction must be >= 0, got {self.b}")
        _require(self.g > 0, f"gravity must be > 0, got {self.g}")
        _require(self.tau > 0, f"step size tau must be > 0, got {self.tau}")


@dataclass(frozen=True)
class CartpoleParams:
    m_c: float = 1.0
    m_p: float = 0.1
    l_p: float = 0.5
    g: float = 9.81
    tau: float = 0.02
    # "total_mass" uses m_c + m_p as the mass divisor, "product" uses m_c * m_p.
    denominator: str = "total_mass"

    def __post_init__(self):
        numeric = [getattr(self, f.name) for f in fields(self) if f.name != "denominator"]
        _require(_all_finite(*numeric), "cartpole parameters must be finite")
        _require(self.m_c > 0, f"cart mass must be > 0, got {self.m_c}")
        _require(self.m_p > 0, f"pole mass must be > 0, got {self.m_p}")
        _require(self.l_p > 0, f"pole length must be > 0, got {self.l_p}")
        _require(self.g > 0, f"gravity must be > 0, got {self.g}")
        _require(self.tau > 0, f"step size tau must be > 0, got {self.tau}")
        _require(
            self.denominator in ("total_mass", "product"),
            f"cartpole denominator must be 'total_mass' or 'product', got {self.denominator!r}",
        )

    @property
    def mass_divisor(self):
        if self.denominator == "product":
            return self.m_p * self.m_c
        return self.m_p + self.m_c


@dataclass(frozen=True)
class ThreeTankParams:
    A1: float = 0.0154
    A2: float = 0.0154
    A3: float = 0.0154
    a12: float = 5e-5
    a23: float = 5e-5
    a3: float = 5e-5
    alpha12: float = 0.5
    alpha23: float = 0.5
    alpha3: float = 0.5
    g: float = 9.81
    tau: float = 5.0

    def __post_init__(self):
        _require(_all_finite(*asdict(self).values()), "three-tank parameters must be finite")
        for name in ("A1", "A2", "A3", "a12", "a23", "a3"):
            _require(getattr(self, name) > 0, f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("alpha12", "alpha23", "alpha3"):
            value = getattr(self, name)
            _require(0.0 <= value <= 1.0, f"{name} must lie in [0, 1], got {value}")
        _require(self.g > 0, f"gravity must be > 0, got {self.g}")
        _require(self.tau > 0, f"step size tau must be > 0, got {self.tau}")

    @property
    def areas(self):
        return np.array([self.A1, self.A2, self.A3])


# Diverging rollouts are reported through the finiteness checks, not warnings.
_quiet = np.errstate(over="ignore", invalid="ignore")


def _check_finite(kind, state, u, result):
    if not np.all(np.isfinite(result)):
        raise SimulationError(
            f"{kind} step produced a non-finite state from state={np.asarray(state).tolist()} "
            f"input={np.asarray(u).tolist()}; check the plant parameters",
            state=state,
            action=u,
        )


# --------------------------------------------------------------------------- pendulum


@_quiet
def pendulum_accel(state, u, p: PendulumParams):
    """Angular acceleration: friction, gravity and input torque terms summed."""
    state = np.asarray(state, dtype=float)
    phi, phi_dot = state[..., 0], state[..., 1]
    inertia = p.m * p.l**2
    return -(p.b / inertia) * phi_dot - (p.g / p.l) * np.sin(phi) + (1.0 / inertia) * np.asarray(u, dtype=float)


@_quiet
def pendulum_step(state, u, p: PendulumParams, check=True):
    """One semi-implicit Euler step of the pendulum.

    The velocity is advanced first and the angle is then moved with the new
    velocity.  ``state`` is ``[phi, phi_dot]`` (or a stack of them) and ``u``
    the applied force in newtons.  The angle is not wrapped.
    """
    state = np.asarray(state, dtype=float)
    phi_dot = state[..., 1] + p.tau * pendulum_accel(state, u, p)
    phi = state[..., 0] + p.tau * phi_dot
    out = np.stack([phi, phi_dot], axis=-1)
    if check:
        _check_finite("pendulum", state, u, out)
    return out


# --------------------------------------------------------------------------- cartpole


@_quiet
def cartpole_accel(state, force, p: CartpoleParams):
    """Return ``(theta_ddot, x_ddot)`` for a frictionless cartpole.

    The pole acceleration is computed first and substituted into the cart
    acceleration.
    """
    state = np.asarray(state, dtype=float)
    theta, theta_dot = state[..., 2], state[..., 3]
    force = np.asarray(force, dtype=float)
    mass = p.mass_divisor
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    pole_ml = p.m_p * p.l_p
    temp = (force + pole_ml * theta_dot**2 * sin_t) / mass
    denom = p.l_p * (4.0 / 3.0 - p.m_p * cos_t**2 / mass)
    if np.any(denom <= 0):
        raise ConfigError(
            f"cartpole pole-acceleration denominator is non-positive ({np.min(denom)}); "
            "check m_p, m_c and the denominator mode"
        )
    theta_ddot = (p.g * sin_t - cos_t * temp) / denom
    x_ddot = temp - pole_ml * theta_ddot * cos_t / mass
    return theta_ddot, x_ddot


@_quiet
def cartpole_step(state, force, p: CartpoleParams, check=True):
    """Explicit Euler step; every right-hand side uses the old state."""
    state = np.asarray(state, dtype=float)
    theta_ddot, x_ddot = cartpole_accel(state, force, p)
    x, x_dot, theta, theta_dot = (state[..., i] for i in range(4))
    out = np.stack(
        [x + p.tau * x_dot, x_dot + p.tau * x_ddot, theta + p.tau * theta_dot, theta_dot + p.tau * theta_ddot],
        axis=-1,
    )
    if check:
        _check_finite("cartpole", state, force, out)
    return out


# --------------------------------------------------------------------------- three tanks


@_quiet
def tank_flows(levels, p: ThreeTankParams):
    """Volume flows ``(q12, q23, q3)`` through the three pipes in m^3/s.

    Flow between two tanks follows the sign of the level difference, with
    ``sign(0) = 0``.
    """
    levels = np.asarray(levels, dtype=float)
    x1, x2, x3 = levels[..., 0], levels[..., 1], levels[..., 2]
    two_g = 2.0 * p.g
    d12 = x1 - x2
    d23 = x2 - x3
    q12 = p.alpha12 * p.a12 * np.sign(d12) * np.sqrt(two_g * np.abs(d12))
    q23 = p.alpha23 * p.a23 * np.sign(d23) * np.sqrt(two_g * np.abs(d23))
    q3 = p.alpha3 * p.a3 * np.sqrt(two_g * np.maximum(x3, 0.0))
    return q12, q23, q3


@_quiet
def tank_rates(levels, inflows, p: ThreeTankParams):
    """Level derivatives for inflows ``(q_in1, q_in3)`` into tanks 1 and 3."""
    inflows = np.asarray(inflows, dtype=float)
    q_in1, q_in3 = inflows[..., 0], inflows[..., 1]
    q12, q23, q3 = tank_flows(levels, p)
    return np.stack([(q_in1 - q12) / p.A1, (q12 - q23) / p.A2, (q_in3 + q23 - q3) / p.A3], axis=-1)


@_quiet
def tank_step(levels, inflows, p: ThreeTankParams, check=True):
    """Explicit Euler step of the three-tank levels, clamped at zero."""
    levels = np.asarray(levels, dtype=float)
    out = np.maximum(levels + p.tau * tank_rates(levels, inflows, p), 0.0)
    if check:
        _check_finite("three-tank", levels, inflows, out)
    return out


# --------------------------------------------------------------------------- plant objects


@dataclass(frozen=True)
class StateBlob:
    """Opaque copy of a plant's state, tagged with the plant it came from."""

    kind: str
    params: object
    state: tuple


class Plant:
    """A controlled system holding one live state vector.

    Subclasses define ``kind``, the state/input/output sizes, the observed
    state components and a batched ``advance``.
    """

    kind = ""
    n_states = 0
    n_inputs = 0
    n_outputs = 0
    output_index: tuple = ()
    params_type: type = object

    def __init__(self, params=None, state=None):
        if params is None:
            params = self.params_type()
        if not isinstance(params, self.params_type):
            raise ConfigError(f"{self.kind} plant needs {self.params_type.__name__}, got {type(params).__name__}")
        self.params = params
        self.state = self.initial_state()
        if state is not None:
            self.reset(state)

    def __repr__(self):
        return f"{type(self).__name__}(state={self.state.tolist()})"

    def initial_state(self):
        return np.zeros(self.n_states)

    def reset(self, state=None):
        if state is None:
            self.state = self.initial_state()
            return
        state = np.array(state, dtype=float).reshape(-1)
        if state.shape != (self.n_states,):
            raise ConfigError(f"{self.kind} state must have {self.n_states} entries, got {state.shape[0]}")
        if not np.all(np.isfinite(state)):
            raise ConfigError(f"{self.kind} state must be finite, got {state.tolist()}")
        self.state = state

    def advance(self, states, actions):
        """Pure batched step without finiteness checks."""
        raise NotImplementedError

    def outputs_of(self, states):
        return np.asarray(states)[..., list(self.output_index)]

    def observe(self):
        return self.outputs_of(self.state).copy()

    def step(self, action):
        """Apply one input vector to the live plant and return the new output."""
        action = np.asarray(action, dtype=float).reshape(self.n_inputs)
        nxt = self.advance(self.state, action)
        if not np.all(np.isfinite(nxt)):
            raise SimulationError(
                f"{self.kind} step produced a non-finite state from state={self.state.tolist()} "
                f"input={action.tolist()}",
                state=self.state.copy(),
                action=action,
            )
        self.state = nxt
        return self.observe()

    def snapshot(self):
        return StateBlob(self.kind, self.params, tuple(self.state.tolist()))

    def restore(self, blob):
        if not isinstance(blob, StateBlob):
            raise TypeError(f"expected a StateBlob, got {type(blob).__name__}")
        if blob.kind != self.kind:
            raise ValueError(f"cannot restore a {blob.kind} snapshot into a {self.kind} plant")
        if blob.params != self.params:
            raise ValueError(f"snapshot parameters {blob.params} differ from plant parameters {self.params}")
        self.state = np.array(blob.state, dtype=float)

    def clone(self):
        twin = type(self)(self.params)
        twin.state = self.state.copy()
        return twin


class Pendulum(Plant):
    kind = "pendulum"
    n_states = 2
    n_inputs = 1
    n_outputs = 1
    output_index = (0,)
    params_type = PendulumParams

    def advance(self, states, actions):
        return pendulum_step(states, np.asarray(actions)[..., 0], self.params, check=False)


class Cartpole(Plant):
    kind = "cartpole"
    n_states = 4
    n_inputs = 1
    n_outputs = 2
    output_index = (0, 2)
    params_type = CartpoleParams

    def advance(self, states, actions):
        return cartpole_step(states, np.asarray(actions)[..., 0], self.params, check=False)


class ThreeTank(Plant):
    kind = "tanks"
    n_states = 3
    n_inputs = 2
    n_outputs = 3
    output_index = (0, 1, 2)
    params_type = ThreeTankParams

    def advance(self, states, actions):
        return tank_step(states, actions, self.params, check=False)


PLANT_KINDS = {"pendulum": Pendulum, "cartpole": Cartpole, "tanks": ThreeTank}
_ALIASES = {"three-tank": "tanks", "three_tank": "tanks", "threetank": "tanks"}


def canonical_kind(kind):
    kind = _ALIASES.get(kind, kind)
    if kind not in PLANT_KINDS:
        raise ConfigError(f"unknown plant kind {kind!r}; expected one of {sorted(PLANT_KINDS)}")
    return kind


def make_plant(kind, params=None, state=None):
    """Build a plant from its kind name and an optional parameter mapping."""
    cls = PLANT_KINDS[canonical_kind(kind)]
    if isinstance(params, dict):
        try:
            params = cls.params_type(**params)
        except TypeError as exc:
            raise ConfigError(f"bad {kind} parameters: {exc}") from None
    return cls(params, state)
