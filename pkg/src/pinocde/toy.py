"""Preset systems used by the examples, the CLI defaults and the test suite."""
from __future__ import annotations

import math

from .system import (Connection, ExcitationSpec, FlexibleBodyConfig, Load, ParameterSpace, ParamSpec,
                     PointMass, SystemConfig)

# 225 samples: a cheap FFT length, unlike the prime 401 or 257
TOY_DT = 0.01
TOY_T = 2.24


def toy_system() -> SystemConfig:
    """Six rigid masses coupled to one shear beam reduced to five modes (11 DOFs).

    Upper masses ``a1..a3`` hang on the beam at quarter points, lower masses
    ``b1..b3`` sit on ground springs and connect to the beam from below. Beam
    modes land near 1..5 Hz; the rigid modes sit between 1.4 and 3 Hz.
    """
    beam = FlexibleBodyConfig(name="beam", kind="shear_beam", length=1.0, mass_per_length=2.0,
                              stiffness=8.0, n_elements=24, n_modes=5, alpha=0.5, beta=0.002)
    masses = [PointMass(name=f"a{i}", mass="m_top") for i in (1, 2, 3)]
    masses += [PointMass(name=f"b{i}", mass="m_bot") for i in (1, 2, 3)]
    cons = []
    for i, s in zip((1, 2, 3), (0.25, 0.5, 0.75)):
        cons.append(Connection(a=f"a{i}", b=f"beam@{s}", k="k_c", c="c_c"))
    cons += [Connection(a="a1", b="a2", k=20.0, c=0.1), Connection(a="a2", b="a3", k=20.0, c=0.1)]
    for i, s in zip((1, 2, 3), (0.2, 0.5, 0.8)):
        cons.append(Connection(a=f"b{i}", b="ground", k=60.0, c=0.4))
        cons.append(Connection(a=f"b{i}", b=f"beam@{s}", k="k_c", c="c_c"))
    loads = [Load(channel=0, at="a1"), Load(channel=1, at="beam@0.4")]
    return SystemConfig(masses=tuple(masses), bodies=(beam,), connections=tuple(cons), loads=tuple(loads))


def toy_space(dt: float = TOY_DT, T: float = TOY_T) -> ParameterSpace:
    """Uniform masses and coupling properties, two band-limited load channels."""
    band = (0.3, 4.0)
    params = [
        ParamSpec(name="m_top", lo=0.4, hi=0.6),
        ParamSpec(name="m_bot", lo=0.8, hi=1.2),
        ParamSpec(name="k_c", lo=30.0, hi=50.0),
        ParamSpec(name="c_c", lo=0.2, hi=0.6),
    ]
    exc = ExcitationSpec(kind="band-limited-noise", psd_params={"intensity": 1.0 / (band[1] - band[0])},
                         band=band, channels=2)
    return ParameterSpace(params=params, excitation=exc, dt=dt, T=T)


def sdof_system() -> SystemConfig:
    return SystemConfig(masses=(PointMass(name="m", mass="m"),),
                        connections=(Connection(a="m", k="k", c="c"),),
                        loads=(Load(channel=0, at="m"),))


def sdof_space(k_spread: float = 0.2, k0: float = (2 * math.pi) ** 2, zeta: float = 0.5,
               load_amp: float = 10.0, load_freq: float = 0.5, load_phase: float = 2.88,
               dt: float = 0.01, T: float = 4.0) -> ParameterSpace:
    """Linear SDOF with stiffness uniform on ``[1 - spread, 1 + spread] k0``.

    The defaults put two load cycles in the record below resonance, with a
    phase that keeps the response spread about equal at a quarter, half and
    all of ``T``; heavy damping removes the start-up transient early.
    """
    c = 2 * zeta * math.sqrt(k0)
    params = [ParamSpec(name="m", dist="fixed", value=1.0),
              ParamSpec(name="k", lo=(1 - k_spread) * k0, hi=(1 + k_spread) * k0),
              ParamSpec(name="c", dist="fixed", value=c)]
    exc = ExcitationSpec(kind="harmonic", psd_params={"amplitude": load_amp, "frequency": load_freq,
                                                          "phase": load_phase},
                         channels=1)
    return ParameterSpace(params=params, excitation=exc, dt=dt, T=T)


def full_layout_system() -> SystemConfig:
    """Six 3-D marbles on two flexible plates with 15 and 10 modes (43 DOFs)."""
    upper = FlexibleBodyConfig(name="upper", length=1.0, mass_per_length=1.0, stiffness=50.0,
                               n_elements=30, n_modes=15)
    lower = FlexibleBodyConfig(name="lower", length=1.0, mass_per_length=1.5, stiffness=80.0,
                               n_elements=30, n_modes=10)
    masses = tuple(PointMass(name=f"ball{i}", mass=0.2, directions=("x", "y", "z")) for i in range(6))
    cons = []
    for i in range(6):
        body = "upper" if i < 3 else "lower"
        cons.append(Connection(a=f"ball{i}", b=f"{body}@{0.25 * (i % 3 + 1)}", k=100.0, c=0.5, direction="z"))
        cons.append(Connection(a=f"ball{i}", k=50.0, c=0.2))
    loads = (Load(channel=0, at="ball0", direction="z"),)
    return SystemConfig(masses=masses, bodies=(upper, lower), connections=tuple(cons), loads=loads)
