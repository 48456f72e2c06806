"""
model module for spikelab.
defines the solution network, the augmented observable embedding and the
continuous-time koopman generator.
"""

import itertools
import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from . import autodiff as ad
from .autodiff import Jet
from ..utils.exceptions import DimensionError

DTYPE = torch.float64


@dataclass(frozen=True)
class Architecture:
    """layer layout of a tanh multilayer perceptron."""

    input_dim: int
    output_dim: int
    hidden_layers: int = 4
    hidden_units: int = 128
    output_activation: bool = False

    def layer_sizes(self) -> List[int]:
        return [self.input_dim] + [self.hidden_units] * self.hidden_layers + [self.output_dim]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class EmbeddingSpec:
    """
    observable embedding g(u) = [W_lib psi_d(u), mlp(u)].

    the library holds every monomial of degree <= poly_degree in graded
    lexicographic order; the latent mlp fills the rest of observable_dim.
    """

    state_dim: int
    poly_degree: int = 2
    observable_dim: int = 64
    learn_library_projection: bool = False
    hidden_layers: int = 4
    hidden_units: int = 128

    def __post_init__(self):
        if self.poly_degree < 0:
            raise DimensionError("poly_degree must be >= 0")
        if self.latent_width < 0:
            raise DimensionError(
                f"observable_dim {self.observable_dim} is smaller than the library size {self.library_size}"
            )

    @property
    def library_size(self) -> int:
        return math.comb(self.state_dim + self.poly_degree, self.poly_degree)

    @property
    def latent_width(self) -> int:
        return self.observable_dim - self.library_size

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _affine(layer: nn.Linear, h: Any) -> Any:
    if isinstance(h, Jet):
        return h.linear(layer.weight, layer.bias)
    return F.linear(h, layer.weight, layer.bias)


class MlpParams(nn.Module):
    """
    tanh mlp with xavier-uniform weights and zero biases.
    forward accepts plain tensors or jets.
    """

    def __init__(self, architecture: Architecture, generator: torch.Generator):
        super().__init__()
        self.architecture = architecture
        sizes = architecture.layer_sizes()
        self.layers = nn.ModuleList(
            nn.Linear(fan_in, fan_out, dtype=DTYPE) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        )
        with torch.no_grad():
            for layer in self.layers:
                bound = math.sqrt(6.0 / (layer.in_features + layer.out_features))
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()

    def forward(self, h: Any) -> Any:
        for layer in self.layers[:-1]:
            h = ad.tanh(_affine(layer, h))
        h = _affine(self.layers[-1], h)
        if self.architecture.output_activation:
            h = ad.tanh(h)
        return h

    def spectral_norm_product(self) -> float:
        """product of the layer spectral norms (lipschitz proxy; tanh is 1-lipschitz)."""
        product = 1.0
        for layer in self.layers:
            product *= float(torch.linalg.matrix_norm(layer.weight.detach(), ord=2))
        return product


def polynomial_library(u: Any, degree: int) -> Any:
    """
    monomials of the state up to the given degree.

    ordering is graded lexicographic: [1, u1..un, u1^2, u1*u2, ..., un^2, ...].

    args:
        u: state of shape (..., n); numpy, torch or jet
        degree: maximal total degree

    returns:
        array of shape (..., C(n + degree, degree))
    """
    if degree < 0:
        raise DimensionError("degree must be >= 0")
    n = u.shape[-1] if not isinstance(u, Jet) else u.value.shape[-1]
    ones = u[..., :1] * 0.0 + 1.0
    columns = []
    for k in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), k):
            term = ones
            for i in combo:
                term = term * u[..., i:i + 1]
            columns.append(term)
    return ad.concat(columns)


def monomial_names(state_dim: int, degree: int, symbols: Optional[List[str]] = None) -> List[str]:
    """human readable labels matching polynomial_library ordering."""
    if symbols is None:
        symbols = ['u'] if state_dim == 1 else [f'u{i + 1}' for i in range(state_dim)]
    names = []
    for k in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(state_dim), k):
            if not combo:
                names.append('1')
                continue
            parts = []
            for i, group in itertools.groupby(combo):
                power = len(list(group))
                parts.append(symbols[i] if power == 1 else f'{symbols[i]}^{power}')
            names.append('*'.join(parts))
    return names


class ObservableEmbedding(nn.Module):
    """library block (W_lib psi_d) concatenated with a latent tanh mlp."""

    def __init__(self, spec: EmbeddingSpec, generator: torch.Generator):
        super().__init__()
        self.spec = spec
        identity = torch.eye(spec.library_size, dtype=DTYPE)
        if spec.learn_library_projection:
            self.library_projection = nn.Parameter(identity)
        else:
            self.register_buffer('library_projection', identity)
        self.latent = None
        if spec.latent_width > 0:
            self.latent = MlpParams(
                Architecture(
                    input_dim=spec.state_dim,
                    output_dim=spec.latent_width,
                    hidden_layers=spec.hidden_layers,
                    hidden_units=spec.hidden_units,
                    output_activation=True,
                ),
                generator,
            )

    def library(self, u: torch.Tensor) -> torch.Tensor:
        return polynomial_library(u, self.spec.poly_degree) @ self.library_projection.T

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        z = self.library(u)
        if self.latent is not None:
            z = torch.cat([z, self.latent(u)], dim=-1)
        return z


def embed(u: Any, embedding: ObservableEmbedding) -> Any:
    """observable vector z = g(u); numpy in, numpy out."""
    if isinstance(u, torch.Tensor):
        return embedding(u)
    with torch.no_grad():
        return embedding(torch.as_tensor(np.asarray(u, dtype=np.float64))).numpy()


class GeneratorMatrix(nn.Module):
    """continuous-time koopman generator A with dz/dt = A z; library block first."""

    def __init__(self, observable_dim: int, library_size: int):
        super().__init__()
        if not 0 <= library_size <= observable_dim:
            raise DimensionError("library block must fit inside the generator")
        self.library_size = library_size
        self.A = nn.Parameter(torch.zeros(observable_dim, observable_dim, dtype=DTYPE))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def blocks(self) -> Dict[str, torch.Tensor]:
        k = self.library_size
        A = self.A
        return {
            'lib_lib': A[:k, :k],
            'lib_mlp': A[:k, k:],
            'mlp_lib': A[k:, :k],
            'mlp_mlp': A[k:, k:],
        }

    def numpy(self) -> np.ndarray:
        return self.A.detach().cpu().numpy().copy()


class PikeModel(nn.Module):
    """solution network u_theta, observable embedding and generator, trained together."""

    def __init__(self, architecture: Architecture, embedding_spec: EmbeddingSpec, seed: int):
        super().__init__()
        if embedding_spec.state_dim != architecture.output_dim:
            raise DimensionError("embedding state_dim must equal the solution output_dim")
        generator = torch.Generator().manual_seed(int(seed))
        self.architecture = architecture
        self.embedding_spec = embedding_spec
        self.seed = int(seed)
        self.solution = MlpParams(architecture, generator)
        self.embedding = ObservableEmbedding(embedding_spec, generator)
        self.generator = GeneratorMatrix(embedding_spec.observable_dim, embedding_spec.library_size)

    def forward(self, points: Any) -> Any:
        return self.solution(points)

    def observables(self, points: torch.Tensor) -> torch.Tensor:
        return self.embedding(self.solution(points))


def init_params(architecture: Architecture, embedding_spec: EmbeddingSpec, seed: int) -> PikeModel:
    """
    deterministic initialization for a seed.

    returns:
        PikeModel bundling the solution mlp, the latent mlp and a zero generator
    """
    return PikeModel(architecture, embedding_spec, seed)


def make_points(x: Any, t: Any) -> torch.Tensor:
    """stack coordinates into an (N, d) tensor ordered (x, t); x=None for odes."""
    t = torch.as_tensor(np.asarray(t, dtype=np.float64) if not isinstance(t, torch.Tensor) else t, dtype=DTYPE)
    t = t.reshape(-1)
    if x is None:
        return t[:, None]
    x = torch.as_tensor(np.asarray(x, dtype=np.float64) if not isinstance(x, torch.Tensor) else x, dtype=DTYPE)
    return torch.stack([x.reshape(-1), t], dim=-1)


def evaluate_solution(params: Union[nn.Module, Any], x: Any, t: Any) -> Any:
    """
    evaluate u_theta at coordinates (x, t); anywhere, including ood windows.

    args:
        params: PikeModel, MlpParams or callable on (N, d) tensors
        x: spatial coordinates (None for odes)
        t: times, same length as x

    returns:
        values (N, channels); numpy when the inputs were numpy
    """
    as_numpy = not isinstance(t, torch.Tensor)
    points = make_points(x, t)
    if as_numpy:
        with torch.no_grad():
            return params(points).numpy()
    return params(points)
