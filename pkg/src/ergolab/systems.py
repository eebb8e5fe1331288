"""
Named builders for base maps, fiber maps, potentials and observables
"""
import logging
from typing import Callable, Dict, List

import numpy as np

from . import base_dynamics, potentials, skew_transfer
from .config import ExperimentConfig, SystemConfig, Tolerances
from .exceptions import BuilderNotFoundError, ConfigurationError
from .skew_transfer import SkewSystem

logger = logging.getLogger(__name__)


class BuilderRegistry:
    """Maps config names to constructors"""

    def __init__(self, kind: str):
        self.kind = kind
        self._builders: Dict[str, Callable] = {}

    def register(self, name: str, builder: Callable) -> Callable:
        self._builders[name] = builder
        return builder

    def names(self) -> List[str]:
        return sorted(self._builders)

    def get(self, name: str) -> Callable:
        if name not in self._builders:
            available = ", ".join(self.names())
            raise BuilderNotFoundError(f"{self.kind.title()} '{name}' not found. Available: {available}")
        return self._builders[name]

    def build(self, name: str, *args, **params):
        builder = self.get(name)
        try:
            return builder(*args, **params)
        except TypeError as e:
            raise ConfigurationError(f"Bad parameters for {self.kind} '{name}': {e}")


base_maps = BuilderRegistry("base map")
base_maps.register("doubling", base_dynamics.doubling)
base_maps.register("l_adic", base_dynamics.l_adic)
base_maps.register("manneville_pomeau", base_dynamics.manneville_pomeau)
base_maps.register("piecewise_affine", base_dynamics.piecewise_affine)

fiber_maps = BuilderRegistry("fiber map")
fiber_maps.register("affine", skew_transfer.affine)
fiber_maps.register("solenoid", skew_transfer.solenoid)
fiber_maps.register("piecewise_constant", skew_transfer.piecewise_constant)
fiber_maps.register("piecewise_lipschitz", skew_transfer.piecewise_lipschitz)

potential_builders = BuilderRegistry("potential")
potential_builders.register(
    "constant", lambda fmap, zeta, epsilon_phi, c=0.0: potentials.constant_potential(
        c, zeta=zeta, epsilon_phi=epsilon_phi, circle=fmap.circle))
potential_builders.register(
    "geometric", lambda fmap, zeta, epsilon_phi, t=1.0: potentials.geometric_potential(
        fmap, t, zeta, epsilon_phi=epsilon_phi))
potential_builders.register(
    "tabulated", lambda fmap, zeta, epsilon_phi, values=(): potentials.tabulated_potential(
        values, zeta, epsilon_phi=epsilon_phi, circle=fmap.circle))

# base observables psi(x)
base_observables = BuilderRegistry("base observable")
base_observables.register("one", lambda system: lambda x: np.ones(np.shape(x)))
base_observables.register("cos2pi", lambda system: lambda x: np.cos(2.0 * np.pi * x))
base_observables.register("sin_abs", lambda system: lambda x: np.abs(np.sin(np.pi * x)))


def _coboundary(system: SkewSystem):
    """u o F - u for u(x, y) = cos 2 pi x"""
    def observable(x, y):
        return np.cos(2.0 * np.pi * system.base.evaluate(x)) - np.cos(2.0 * np.pi * x)
    return observable


# fiber observables phi(x, y)
fiber_observables = BuilderRegistry("fiber observable")
fiber_observables.register("zero", lambda system: lambda x, y: np.zeros(np.broadcast(x, y).shape))
fiber_observables.register("one", lambda system: lambda x, y: np.ones(np.broadcast(x, y).shape))
fiber_observables.register("cos2pi_x", lambda system: lambda x, y: np.cos(2.0 * np.pi * x) + 0.0 * y)
fiber_observables.register("y", lambda system: lambda x, y: y + 0.0 * x)
fiber_observables.register("y_sin_abs", lambda system: lambda x, y: y * np.abs(np.sin(np.pi * x)))
fiber_observables.register("coboundary", _coboundary)
fiber_observables.register("potential_plus_y", lambda system: lambda x, y: system.potential(x) + y)


def build_system(system: SystemConfig, tolerances: Tolerances) -> SkewSystem:
    """Base map, fiber map and potential from a config block, with spectral data"""
    fmap = base_maps.build(system.base.builder, **system.base.params)
    fiber_params = dict(system.fiber.params)
    if system.fiber.builder in ("solenoid", "piecewise_lipschitz"):
        fiber_params.setdefault("zeta", system.zeta)
    fiber = fiber_maps.build(system.fiber.builder, **fiber_params)
    phi = potential_builders.build(system.potential.builder, fmap, system.zeta, system.potential.epsilon_phi,
                                   **system.potential.params)
    logger.info(f"Building {fmap.name} x {fiber.name} with potential {phi.name}, N={system.N}")
    return SkewSystem.build(fmap, fiber, phi, N=system.N, bins=system.bins, atom_cap=system.atom_cap,
                            tol=tolerances.eigen_tol, max_iter=tolerances.eigen_max_iter)


def build_from_config(cfg: ExperimentConfig) -> SkewSystem:
    return build_system(cfg.system, cfg.tolerances)
