"""
model training module for spikelab.
assembles the physics, koopman, sparsity and initial/boundary objective and
runs the adam optimizer.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch

from .linalg import expm
from .model import Architecture, EmbeddingSpec, GeneratorMatrix, PikeModel, init_params
from .systems import CollocationSet, SystemSpec, get_system, ic_bc_loss, residual, sample_collocation
from ..utils.config import TrainConfig
from ..utils.exceptions import DomainError, TrainingDivergedError
from ..utils.model_manager import ModelManager

LOSS_COLUMNS = ['step', 'total', 'physics', 'koopman', 'sparse', 'ic', 'bc']
INTEGRATORS = ('euler', 'rk4', 'expm')


@dataclass
class KoopmanPairBatch:
    """observable pairs (z_n, z_{n+1}) and their source points (x, t), (x, t + dt)."""

    z_now: torch.Tensor
    z_next: torch.Tensor
    points: torch.Tensor
    next_points: torch.Tensor
    dt: float

    def __len__(self) -> int:
        return self.z_now.shape[0]


@dataclass
class LossBreakdown:
    """weighted terms summing to the total plus the raw (unweighted) magnitudes."""

    total: torch.Tensor
    weighted: Dict[str, torch.Tensor]
    raw: Dict[str, float] = field(default_factory=dict)

    def as_row(self, step: int) -> Dict[str, float]:
        row = {'step': step, 'total': float(self.total.detach())}
        row.update({k: float(v.detach()) for k, v in self.weighted.items()})
        return row


@dataclass
class TrainingResult:
    model: PikeModel
    history: pd.DataFrame
    checkpoint_path: Optional[str]
    seconds: float
    steps: int

    @property
    def params(self):
        return self.model.solution

    @property
    def generator(self) -> GeneratorMatrix:
        return self.model.generator

    @property
    def seconds_per_1000_steps(self) -> float:
        return 1000.0 * self.seconds / self.steps if self.steps else 0.0


def _matrix(A: Union[GeneratorMatrix, torch.Tensor]) -> torch.Tensor:
    return A.A if isinstance(A, GeneratorMatrix) else A


def propagate(z: torch.Tensor, A: torch.Tensor, dt: float, integrator: str) -> torch.Tensor:
    """advance row-vector observables z (B, M) by dt under dz/dt = A z."""
    if integrator == 'euler':
        return z + dt * z @ A.T
    if integrator == 'rk4':
        k1 = z @ A.T
        k2 = (z + 0.5 * dt * k1) @ A.T
        k3 = (z + 0.5 * dt * k2) @ A.T
        k4 = (z + dt * k3) @ A.T
        return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if integrator == 'expm':
        return z @ expm(A, dt).T
    raise DomainError(f"unknown integrator '{integrator}'; expected one of {INTEGRATORS}")


def koopman_loss(pairs: KoopmanPairBatch, A: Union[GeneratorMatrix, torch.Tensor], integrator: str) -> torch.Tensor:
    """
    mean squared propagation error of the observable pairs.

    args:
        pairs: KoopmanPairBatch (non-empty)
        A: generator matrix or (M, M) tensor
        integrator: euler, rk4 or expm

    returns:
        scalar tensor: mean over pairs of ||z_{n+1} - propagate(z_n)||^2
    """
    if len(pairs) == 0:
        raise DomainError("koopman loss needs at least one pair")
    predicted = propagate(pairs.z_now, _matrix(A), pairs.dt, integrator)
    return torch.mean(torch.sum((pairs.z_next - predicted) ** 2, dim=-1))


def sample_koopman_pairs(
    spec: Any,
    model: PikeModel,
    interior: np.ndarray,
    dt: float,
    seed: Any,
    batch_size: int,
) -> KoopmanPairBatch:
    """
    observable pairs from a fresh random subset of interior points.

    pairs whose t + dt leaves the training window are kept.

    args:
        spec: system
        model: PikeModel (z = g(u_theta))
        interior: interior collocation points (N, d), time in the last column
        dt: koopman time step
        seed: rng seed (int or sequence)
        batch_size: number of pairs

    returns:
        KoopmanPairBatch with min(batch_size, N) pairs
    """
    spec = get_system(spec)
    rng = np.random.default_rng(seed)
    n = min(batch_size, len(interior))
    chosen = interior[rng.choice(len(interior), size=n, replace=False)]
    points = torch.as_tensor(chosen, dtype=torch.float64)
    next_points = points.clone()
    next_points[:, -1] += dt
    return KoopmanPairBatch(
        z_now=model.observables(points),
        z_next=model.observables(next_points),
        points=points,
        next_points=next_points,
        dt=dt,
    )


def physics_loss(spec: SystemSpec, model: Any, points: torch.Tensor) -> torch.Tensor:
    """mean squared residual norm over the given points."""
    r = residual(spec, model, points)
    return torch.mean(torch.sum(r ** 2, dim=-1))


def total_loss(
    model: PikeModel,
    spec: Any,
    collocation: CollocationSet,
    pairs: Optional[KoopmanPairBatch],
    config: TrainConfig,
    physics_points: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, LossBreakdown]:
    """
    L = physics + lambda_k L_koopman + lambda_s ||A||_1 + lambda_ic L_IC + lambda_bc L_BC.

    args:
        model: PikeModel
        spec: system
        collocation: training points
        pairs: koopman pairs (ignored when lambda_koopman is 0)
        config: TrainConfig
        physics_points: interior minibatch (default: every interior point)

    returns:
        (total, LossBreakdown)
    """
    spec = get_system(spec)
    if physics_points is None:
        physics_points = torch.as_tensor(collocation.interior, dtype=torch.float64)
    zero = torch.zeros((), dtype=torch.float64)

    physics = physics_loss(spec, model.solution, physics_points)
    loss_ic, loss_bc = ic_bc_loss(spec, model.solution, collocation)
    koop = zero
    if config.lambda_koopman > 0.0 and pairs is not None:
        koop = koopman_loss(pairs, model.generator, config.integrator)
    l1 = model.generator.A.abs().sum()

    weighted = {
        'physics': physics,
        'koopman': config.lambda_koopman * koop,
        'sparse': config.lambda_sparse * l1,
        'ic': config.lambda_ic * loss_ic,
        'bc': config.lambda_bc * loss_bc,
    }
    for term, value in weighted.items():
        if not torch.isfinite(value):
            raise TrainingDivergedError(term, -1)
    total = sum(weighted.values(), zero)
    raw = {
        'physics': float(physics.detach()),
        'koopman': float(koop.detach()),
        'l1': float(l1.detach()),
        'ic': float(loss_ic.detach()),
        'bc': float(loss_bc.detach()),
    }
    return total, LossBreakdown(total=total, weighted=weighted, raw=raw)


def build_model(spec: Any, config: TrainConfig) -> PikeModel:
    """solution network, embedding and zero generator sized for the system."""
    spec = get_system(spec)
    architecture = Architecture(
        input_dim=spec.input_dim,
        output_dim=spec.state_dim,
        hidden_layers=config.hidden_layers,
        hidden_units=config.hidden_units,
    )
    embedding = EmbeddingSpec(
        state_dim=spec.state_dim,
        poly_degree=config.poly_degree,
        observable_dim=config.observable_dim,
        learn_library_projection=config.learn_library_projection,
        hidden_layers=config.hidden_layers,
        hidden_units=config.hidden_units,
    )
    return init_params(architecture, embedding, config.seed)


class ModelTrainer:
    """
    model trainer class following single responsibility principle.
    responsible only for optimizing one (system, variant, seed) run.
    """

    def __init__(
        self,
        spec: Any,
        config: TrainConfig,
        output_dir: Optional[str] = None,
        collocation: Optional[CollocationSet] = None,
        verbose: bool = True,
    ):
        """
        initialize the trainer.

        args:
            spec: system or registry name
            config: TrainConfig
            output_dir: where checkpoint.pt and loss.csv go (None keeps everything in memory)
            collocation: training points (default: sampled from the config seed)
            verbose: print progress lines
        """
        self.spec = get_system(spec)
        self.config = config
        self.output_dir = Path(output_dir) if output_dir else None
        self.collocation = collocation or sample_collocation(self.spec, config.seed)
        self.verbose = verbose
        self.model = build_model(self.spec, config)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(),
            lr=config.learning_rate,
            betas=tuple(config.betas),
            eps=config.eps,
        )
        self.manager = ModelManager(str(self.output_dir)) if self.output_dir else None
        self._interior = torch.as_tensor(self.collocation.interior, dtype=torch.float64)

    def _physics_batch(self, rng: np.random.Generator) -> torch.Tensor:
        n = len(self._interior)
        if self.config.full_batch or self.config.physics_batch >= n:
            return self._interior
        index = rng.choice(n, size=self.config.physics_batch, replace=False)
        return self._interior[torch.as_tensor(index)]

    def step_loss(self, step: int) -> Tuple[torch.Tensor, LossBreakdown]:
        """objective at one step with that step's minibatches."""
        rng = np.random.default_rng([self.config.seed, step])
        points = self._physics_batch(rng)
        pairs = None
        if self.config.lambda_koopman > 0.0:
            pairs = sample_koopman_pairs(
                self.spec, self.model, self.collocation.interior, self.config.koopman_dt,
                [self.config.seed, step, 1], self.config.koopman_batch,
            )
        return total_loss(self.model, self.spec, self.collocation, pairs, self.config, points)

    def _save(self, step: int, state: Optional[Dict[str, torch.Tensor]] = None) -> Optional[str]:
        if self.manager is None:
            return None
        return self.manager.save_checkpoint(
            self.model, self.spec.name, self.config, step, state=state, quiet=not self.verbose
        )

    def _log(self, step: int, breakdown: LossBreakdown) -> None:
        raw = breakdown.raw
        print(
            f"[INFO] step {step:5d} | total {float(breakdown.total):.3e} | "
            f"physics {raw['physics']:.3e} | koopman {raw['koopman']:.3e} | "
            f"|A|_1 {raw['l1']:.3e} | ic {raw['ic']:.3e} | bc {raw['bc']:.3e}"
        )

    def fit(self) -> TrainingResult:
        """
        run config.steps adam updates.

        returns:
            TrainingResult with the trained model and the per-step loss history
        """
        if self.verbose:
            print(f"[INFO] training {self.spec.name} / {self.config.variant} / seed {self.config.seed} "
                  f"for {self.config.steps} steps")
        rows: List[Dict[str, float]] = []
        last_good: Optional[Dict[str, torch.Tensor]] = None
        checkpoint = None
        start = time.perf_counter()
        breakdown = None

        for step in range(self.config.steps):
            self.optimizer.zero_grad()
            try:
                loss, breakdown = self.step_loss(step)
            except TrainingDivergedError as exc:
                checkpoint = self._save(step, state=last_good)
                raise TrainingDivergedError(exc.term, step, checkpoint) from exc
            rows.append(breakdown.as_row(step))
            last_good = {k: v.detach().clone() for k, v in self.model.state_dict().items()}

            if self.verbose and step % self.config.log_every == 0:
                self._log(step, breakdown)
            loss.backward()
            self.optimizer.step()

            done = step + 1
            if done % self.config.checkpoint_every == 0 and done < self.config.steps:
                checkpoint = self._save(done)

        seconds = time.perf_counter() - start
        checkpoint = self._save(self.config.steps)
        history = pd.DataFrame(rows, columns=LOSS_COLUMNS)
        if self.output_dir is not None:
            history.to_csv(self.output_dir / 'loss.csv', index=False)
        if self.verbose and breakdown is not None:
            self._log(self.config.steps - 1, breakdown)
            print(f"[OK] finished in {seconds:.1f}s "
                  f"(physics ~ {breakdown.raw['physics']:.1e}, koopman ~ {breakdown.raw['koopman']:.1e})")
        return TrainingResult(self.model, history, checkpoint, seconds, self.config.steps)


def train(
    spec: Any,
    config: TrainConfig,
    output_dir: Optional[str] = None,
    verbose: bool = True,
) -> TrainingResult:
    """
    train one run; deterministic per seed.

    args:
        spec: system or registry name
        config: TrainConfig
        output_dir: directory for checkpoint.pt and loss.csv
        verbose: print progress lines

    returns:
        TrainingResult (solution params, generator, loss history)
    """
    return ModelTrainer(spec, config, output_dir=output_dir, verbose=verbose).fit()
