"""Monte Carlo minimizer over the five pose angles, and its cost functions.

At each iteration one of five search directions is moved by ±Δ (both chosen
from a counter-based Philox stream, two draws per iteration) and the move is
kept only if the cost strictly decreases. Once at least ``warmup`` iterations
have run at the current Δ and the fraction of accepted moves falls below
``acceptance_threshold``, Δ is multiplied by ``decay`` and the counters reset.
A pass ends when Δ drops below ``delta_min``.

For a plain cost callable the search directions are the five angles. The
calibration costs also expose a smooth residual vector; for those the
directions are whitened by the Gauss-Newton curvature of the residuals at the
start of each pass and rotated at random at every Δ level, so the walk can
follow valleys that run diagonally across the angles. Passes repeat from
``delta0`` while a pass lowers the cost by more than ``pass_rtol``.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.stats import special_ortho_group

from correspondences import CorrespondenceSet2D, CorrespondenceSet3D
from errors import ConfigError, NonFiniteCost
from geometry import (
    CameraIntrinsics,
    ExtrinsicAngles,
    Extrinsics,
    TranslationConvention,
    essential_from_extrinsics,
    normalize_points,
    residuals,
)
from triangulation import reconstructed_distances, reprojection_residuals


logger = logging.getLogger(__name__)

DEGENERATE_PENALTY = 1e6
N_ANGLES = 5

FRAME_AUTO = "auto"
FRAME_AXES = "axes"
FRAMES = (FRAME_AUTO, FRAME_AXES)

# Finite-difference step for the residual Jacobian, in rad
JACOBIAN_STEP = 1e-7
# Largest stretch of a whitened direction relative to the geometric mean of all five
FRAME_STRETCH_CAP = 20.0

CostFunction = Callable[[ExtrinsicAngles], float]


@dataclass(frozen=True)
class MonteCarloConfig:
    """Step schedule, search frame and seed of the minimizer."""

    delta0: float = 0.001
    decay: float = 0.75
    acceptance_threshold: float = 0.2
    delta_min: float = 1e-6
    seed: int = 0
    warmup: int = 50
    max_iterations: int = 2_000_000
    max_passes: int = 12
    pass_rtol: float = 1e-4
    frame: str = FRAME_AUTO

    def __post_init__(self):
        if not 0 < self.decay < 1:
            raise ConfigError(f"decay must be in (0, 1), got {self.decay}")
        if not 0 < self.acceptance_threshold < 1:
            raise ConfigError(f"acceptance_threshold must be in (0, 1), got {self.acceptance_threshold}")
        if not 0 < self.delta_min < self.delta0:
            raise ConfigError(f"need 0 < delta_min < delta0, got {self.delta_min}, {self.delta0}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.warmup < 1:
            raise ConfigError(f"warmup must be positive, got {self.warmup}")
        if self.max_passes < 1:
            raise ConfigError(f"max_passes must be positive, got {self.max_passes}")
        if not self.pass_rtol >= 0:
            raise ConfigError(f"pass_rtol must be non-negative, got {self.pass_rtol}")
        if self.frame not in FRAMES:
            raise ConfigError(f"frame must be one of {FRAMES}, got {self.frame!r}")

    @property
    def n_levels(self) -> int:
        """Number of Δ values visited by one pass."""
        return math.ceil(math.log(self.delta_min / self.delta0) / math.log(self.decay))

    def with_seed(self, seed: int) -> "MonteCarloConfig":
        return dataclasses.replace(self, seed=seed)


@dataclass
class MonteCarloTrace:
    """Record of a minimization.

    Attributes:
        moves: (direction index, sign) drawn at every iteration
        accepted_costs: cost after each accepted move, starting with the initial cost
        accepted_angles: angle vector after each accepted move, starting with the initial one
        deltas: Δ of every level visited, pass after pass
        iterations: total number of proposals
        passes: number of passes through the Δ schedule
        whitened: whether the passes searched along whitened directions
    """

    moves: List[Tuple[int, int]] = field(default_factory=list)
    accepted_costs: List[float] = field(default_factory=list)
    accepted_angles: List[np.ndarray] = field(default_factory=list)
    deltas: List[float] = field(default_factory=list)
    iterations: int = 0
    passes: int = 0
    whitened: bool = False
    truncated: bool = False


class MonteCarloResult(NamedTuple):
    angles: ExtrinsicAngles
    cost: float
    trace: MonteCarloTrace


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used by every stochastic step of the package."""
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(master: int, *key: int) -> int:
    """64-bit sub-seed of ``master`` for the given spawn key, e.g. (run_index,)."""
    sequence = np.random.SeedSequence(master, spawn_key=tuple(key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _evaluate(cost: CostFunction, angles: ExtrinsicAngles) -> float:
    value = float(cost(angles))
    if not math.isfinite(value):
        raise NonFiniteCost(f"Cost returned {value!r} at {angles}")
    return value


def whitening_frame(cost: CostFunction, angles: ExtrinsicAngles) -> Optional[np.ndarray]:
    """Search directions scaled by the inverse square root of the residual curvature.

    Uses ``cost.residuals`` (a smooth vector whose norms make up the cost)
    and central differences for its Jacobian J. The columns of the result are
    the eigenvectors of JᵀJ, each of length 1/sqrt(eigenvalue), normalized to
    a unit geometric mean and clipped to [1/FRAME_STRETCH_CAP, FRAME_STRETCH_CAP].

    Returns:
        (5, 5) matrix of directions, or None if the cost has no residuals or
        the Jacobian is not usable at ``angles``
    """
    residual_fn = getattr(cost, "residuals", None)
    if residual_fn is None:
        return None
    x = angles.as_array()
    columns = []
    for k in range(N_ANGLES):
        step = np.zeros(N_ANGLES)
        step[k] = JACOBIAN_STEP
        plus = np.asarray(residual_fn(angles.with_angles(x + step)), dtype=float)
        minus = np.asarray(residual_fn(angles.with_angles(x - step)), dtype=float)
        columns.append((plus - minus) / (2 * JACOBIAN_STEP))
    J = np.column_stack(columns)
    if not np.all(np.isfinite(J)):
        logger.debug("Residual Jacobian is not finite; searching along the angles")
        return None
    eigenvalues, eigenvectors = np.linalg.eigh(J.T @ J)
    if not eigenvalues[-1] > 0:
        return None
    eigenvalues = np.maximum(eigenvalues, eigenvalues[-1] * 1e-16)
    lengths = 1.0 / np.sqrt(eigenvalues)
    lengths /= np.exp(np.mean(np.log(lengths)))
    lengths = np.clip(lengths, 1.0 / FRAME_STRETCH_CAP, FRAME_STRETCH_CAP)
    logger.debug(f"Whitened frame: direction lengths {np.array2string(lengths, precision=3)}")
    return eigenvectors * lengths


def _directions(frame: Optional[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    if frame is None:
        return np.eye(N_ANGLES)
    return frame @ special_ortho_group.rvs(N_ANGLES, random_state=rng)


def minimize(initial: ExtrinsicAngles, cost: CostFunction,
             config: Optional[MonteCarloConfig] = None) -> MonteCarloResult:
    """Minimize ``cost`` over the five angles; the baseline never moves.

    Args:
        initial: starting angles and the measured baseline
        cost: pure function of ExtrinsicAngles returning a finite scalar,
            optionally with a ``residuals`` method (see whitening_frame)
        config: step schedule, search frame and seed

    Returns:
        (best angles, their cost, trace)

    Raises:
        NonFiniteCost: if the cost function returns NaN or infinity
    """
    config = config or MonteCarloConfig()
    rng = make_rng(config.seed)
    trace = MonteCarloTrace()

    x = initial.as_array()
    current = _evaluate(cost, initial)
    trace.accepted_costs.append(current)
    trace.accepted_angles.append(x.copy())
    logger.debug(f"Monte Carlo start: cost {current:.6e}, seed {config.seed}")

    while trace.passes < config.max_passes and not trace.truncated:
        pass_start = current
        frame = whitening_frame(cost, initial.with_angles(x)) if config.frame == FRAME_AUTO else None
        trace.whitened = trace.whitened or frame is not None
        directions = _directions(frame, rng)
        delta = config.delta0
        trace.deltas.append(delta)
        iterations = accepted = 0

        while True:
            index = int(rng.integers(N_ANGLES))
            sign = 1 if rng.integers(2) else -1
            trace.moves.append((index, sign))

            trial = x + (sign * delta) * directions[:, index]
            value = _evaluate(cost, initial.with_angles(trial))
            iterations += 1
            trace.iterations += 1

            if value < current:
                x, current = trial, value
                accepted += 1
                trace.accepted_costs.append(current)
                trace.accepted_angles.append(x.copy())

            if iterations >= config.warmup and accepted / iterations < config.acceptance_threshold:
                logger.debug(f"Δ={delta:.3e}: {accepted}/{iterations} accepted, cost {current:.6e}")
                delta *= config.decay
                iterations = accepted = 0
                if delta < config.delta_min:
                    break
                trace.deltas.append(delta)
                if frame is not None:
                    directions = _directions(frame, rng)

            if trace.iterations >= config.max_iterations:
                logger.warning(f"Monte Carlo stopped after {trace.iterations} iterations at Δ={delta:.3e}")
                trace.truncated = True
                break

        trace.passes += 1
        logger.debug(f"Pass {trace.passes}: cost {pass_start:.6e} -> {current:.6e}")
        if pass_start - current <= config.pass_rtol * pass_start:
            break

    logger.debug(f"Monte Carlo done: cost {current:.6e} after {trace.iterations} iterations, "
                 f"{trace.passes} passes")
    return MonteCarloResult(initial.with_angles(x), current, trace)


# Cost functions

def cost_reprojection(angles: ExtrinsicAngles, corr: CorrespondenceSet2D,
                      K1: CameraIntrinsics, K2: CameraIntrinsics,
                      convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION) -> float:
    """Sum over all pairs and both cameras of the reprojection error, in pixels.

    Pairs that cannot be triangulated in front of both cameras contribute
    DEGENERATE_PENALTY each.
    """
    pose = Extrinsics.from_angles(angles, convention)
    offsets, valid = reprojection_residuals(K1, K2, pose, corr.q1, corr.q2)
    e1 = np.linalg.norm(offsets[:, :2], axis=1)
    e2 = np.linalg.norm(offsets[:, 2:], axis=1)
    return float(np.sum(np.where(valid, e1 + e2, DEGENERATE_PENALTY)))


def cost_reconstruction(angles: ExtrinsicAngles, corr3d: CorrespondenceSet3D,
                        K1: CameraIntrinsics, K2: CameraIntrinsics,
                        convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION) -> float:
    """Sum over target pairs of |D - D_R|, in meters (DEGENERATE_PENALTY per bad entry)."""
    pose = Extrinsics.from_angles(angles, convention)
    dist, valid = reconstructed_distances(K1, K2, pose, corr3d.a1, corr3d.a2, corr3d.b1, corr3d.b2)
    return float(np.sum(np.where(valid, np.abs(corr3d.D - dist), DEGENERATE_PENALTY)))


def cost_residual(angles: ExtrinsicAngles, n1: np.ndarray, n2: np.ndarray,
                  convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION) -> float:
    """Sum of squared epipolar residuals on already normalized points."""
    E = essential_from_extrinsics(Extrinsics.from_angles(angles, convention))
    return float(np.sum(residuals(E, n1, n2) ** 2))


@dataclass(frozen=True, eq=False)
class ReprojectionCost:
    """cost_reprojection bound to a correspondence set; residuals are the pixel offsets."""

    corr: CorrespondenceSet2D
    K1: CameraIntrinsics
    K2: CameraIntrinsics
    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION

    def __call__(self, angles: ExtrinsicAngles) -> float:
        return cost_reprojection(angles, self.corr, self.K1, self.K2, self.convention)

    def residuals(self, angles: ExtrinsicAngles) -> np.ndarray:
        pose = Extrinsics.from_angles(angles, self.convention)
        offsets, valid = reprojection_residuals(self.K1, self.K2, pose, self.corr.q1, self.corr.q2)
        return np.where(valid[:, None], offsets, 0.0).ravel()


@dataclass(frozen=True, eq=False)
class ReconstructionCost:
    """cost_reconstruction bound to target pairs; residuals are D - D_R."""

    corr3d: CorrespondenceSet3D
    K1: CameraIntrinsics
    K2: CameraIntrinsics
    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION

    def __call__(self, angles: ExtrinsicAngles) -> float:
        return cost_reconstruction(angles, self.corr3d, self.K1, self.K2, self.convention)

    def residuals(self, angles: ExtrinsicAngles) -> np.ndarray:
        pose = Extrinsics.from_angles(angles, self.convention)
        c = self.corr3d
        dist, valid = reconstructed_distances(self.K1, self.K2, pose, c.a1, c.a2, c.b1, c.b2)
        return np.where(valid, c.D - dist, 0.0)


@dataclass(frozen=True, eq=False)
class ResidualCost:
    """cost_residual on normalized points; residuals are the epipolar residuals."""

    n1: np.ndarray
    n2: np.ndarray
    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION

    def __call__(self, angles: ExtrinsicAngles) -> float:
        return cost_residual(angles, self.n1, self.n2, self.convention)

    def residuals(self, angles: ExtrinsicAngles) -> np.ndarray:
        E = essential_from_extrinsics(Extrinsics.from_angles(angles, self.convention))
        return residuals(E, self.n1, self.n2)


def reprojection_cost(corr: CorrespondenceSet2D, K1: CameraIntrinsics, K2: CameraIntrinsics,
                      convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                      ) -> ReprojectionCost:
    if len(corr) == 0:
        raise ValueError("Reprojection cost needs at least one correspondence")
    return ReprojectionCost(corr, K1, K2, convention)


def reconstruction_cost(corr3d: CorrespondenceSet3D, K1: CameraIntrinsics, K2: CameraIntrinsics,
                        convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                        ) -> ReconstructionCost:
    if len(corr3d) == 0:
        raise ValueError("Reconstruction cost needs at least one target pair")
    return ReconstructionCost(corr3d, K1, K2, convention)


def residual_cost(corr: CorrespondenceSet2D, K1: CameraIntrinsics, K2: CameraIntrinsics,
                  convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                  ) -> ResidualCost:
    return ResidualCost(normalize_points(K1, corr.q1), normalize_points(K2, corr.q2), convention)
