"""
dense linear algebra module for spikelab.
handles the matrix exponential (differentiable), eigenvalues and least squares.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg
import torch
from sklearn.metrics import r2_score

from ..utils.exceptions import DimensionError, DomainError, NumericalError

ArrayLike = Union[np.ndarray, torch.Tensor]

# degree-13 diagonal pade coefficients and the matching norm bound
PADE13_COEFFS = (
    64764752532480000., 32382376266240000., 7771770303897600.,
    1187353796428800., 129060195264000., 10559470521600.,
    670442572800., 33522128640., 1323241920., 40840800.,
    960960., 16380., 182., 1.,
)
THETA_13 = 5.371920351148152


@dataclass(frozen=True)
class EigenSpectrum:
    """eigenvalues of a real square matrix and their largest real part."""

    eigenvalues: np.ndarray
    spectral_abscissa: float


@dataclass(frozen=True)
class LeastSquaresFit:
    """coefficients of a least-squares fit with its quality."""

    coefficients: np.ndarray
    r_squared: float
    rank: int
    rank_deficient: bool


def _validate_square(A: ArrayLike, name: str = 'A') -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {tuple(A.shape)}")
    finite = torch.isfinite(A).all().item() if isinstance(A, torch.Tensor) else np.isfinite(A).all()
    if not finite:
        raise DomainError(f"{name} has non-finite entries")


def _pade13(A: torch.Tensor):
    b = PADE13_COEFFS
    ident = torch.eye(A.shape[0], dtype=A.dtype, device=A.device)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return U, V


def _squarings(scaled_norm: float) -> int:
    if scaled_norm <= THETA_13:
        return 0
    return max(0, int(math.ceil(math.log2(scaled_norm / THETA_13))))


def expm(A: ArrayLike, dt: float = 1.0) -> ArrayLike:
    """
    matrix exponential e^{A dt} by degree-13 pade with scaling and squaring.

    a torch input keeps the autograd graph so the result is differentiable
    with respect to A; a numpy input returns a numpy array.

    args:
        A: square real matrix
        dt: time step scaling A

    returns:
        e^{A dt} with the same type as A
    """
    if not math.isfinite(float(dt)):
        raise DomainError(f"dt must be finite, got {dt}")
    as_numpy = not isinstance(A, torch.Tensor)
    At = torch.as_tensor(np.asarray(A, dtype=np.float64)) if as_numpy else A
    _validate_square(At)

    scaled = At * dt
    norm_1 = torch.linalg.matrix_norm(scaled.detach(), ord=1).item()
    s = _squarings(norm_1)
    scaled = scaled / (2.0 ** s)

    U, V = _pade13(scaled)
    R = torch.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R

    return R.detach().numpy() if as_numpy else R


def expm_with_grad(A: ArrayLike, dt: float, upstream: ArrayLike) -> np.ndarray:
    """
    gradient of <upstream, e^{A dt}> with respect to A.

    differentiates through the same pade and squaring graph used by expm.

    args:
        A: square real matrix
        dt: time step
        upstream: cotangent with the shape of A

    returns:
        gradient array with the shape of A
    """
    A_t = torch.tensor(np.asarray(A, dtype=np.float64), requires_grad=True)
    G = torch.as_tensor(np.asarray(upstream, dtype=np.float64))
    if G.shape != A_t.shape:
        raise DimensionError(f"upstream shape {tuple(G.shape)} does not match A {tuple(A_t.shape)}")
    E = expm(A_t, dt)
    (grad,) = torch.autograd.grad((E * G).sum(), A_t)
    return grad.numpy()


def eigenvalues(A: ArrayLike) -> EigenSpectrum:
    """
    eigenvalues of a real square matrix (hessenberg reduction plus shifted qr).

    args:
        A: square real matrix

    returns:
        EigenSpectrum with eigenvalues sorted by (real, imag)
    """
    M = A.detach().cpu().numpy() if isinstance(A, torch.Tensor) else np.asarray(A, dtype=np.float64)
    _validate_square(M)
    try:
        values = scipy.linalg.eigvals(M, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigenvalue iteration did not converge: {exc}",
            diagnostics={'shape': M.shape, 'frobenius_norm': float(np.linalg.norm(M))},
        ) from exc
    values = values[np.lexsort((values.imag, values.real))]
    abscissa = float(values.real.max()) if values.size else float('-inf')
    return EigenSpectrum(eigenvalues=values, spectral_abscissa=abscissa)


def least_squares(Theta: ArrayLike, y: ArrayLike) -> LeastSquaresFit:
    """
    minimize ||Theta c - y|| with column-pivoted qr.

    a rank-deficient Theta is flagged and its minimum-norm solution returned.

    args:
        Theta: design matrix (rows >= cols)
        y: target vector

    returns:
        LeastSquaresFit with coefficients, r-squared and rank
    """
    Theta = np.asarray(Theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if Theta.ndim != 2 or Theta.shape[0] < Theta.shape[1]:
        raise DimensionError(f"Theta must be tall, got shape {Theta.shape}")
    if Theta.shape[0] != y.shape[0]:
        raise DimensionError(f"Theta has {Theta.shape[0]} rows but y has {y.shape[0]}")
    if not (np.isfinite(Theta).all() and np.isfinite(y).all()):
        raise DomainError("least squares inputs must be finite")

    n_cols = Theta.shape[1]
    Q, R, perm = scipy.linalg.qr(Theta, mode='economic', pivoting=True)
    tol = 1e-10 * np.linalg.norm(Theta, 2)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol))

    if rank == n_cols:
        coefficients = np.empty(n_cols)
        coefficients[perm] = scipy.linalg.solve_triangular(R, Q.T @ y)
    else:
        coefficients = scipy.linalg.lstsq(Theta, y, cond=1e-10)[0]

    fitted = Theta @ coefficients
    return LeastSquaresFit(
        coefficients=coefficients,
        r_squared=float(r2_score(y, fitted)),
        rank=rank,
        rank_deficient=rank < n_cols,
    )
