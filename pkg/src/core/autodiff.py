"""
automatic differentiation module for spikelab.
propagates truncated multivariate taylor jets for input derivatives up to
order four, and collects parameter gradients through torch autograd.

jet coefficients may be numpy arrays or torch tensors. with tensors, the
autograd graph records every jet operation, so parameter gradients flow
through input derivatives (the reverse tape sees jet coefficients as nodes).
"""

import itertools
import math
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Tuple, Union

import numpy as np
import numpy.polynomial.polynomial as npoly
import torch
from torch import nn

from ..utils.exceptions import DimensionError, UnsupportedOrderError, UnsupportedPrimitiveError

MAX_ORDER = 4

MultiIndex = Tuple[int, ...]
Array = Union[np.ndarray, torch.Tensor]


def _lib(x: Any):
    return torch if isinstance(x, torch.Tensor) else np


def _zeros_like(x: Any):
    return torch.zeros_like(x) if isinstance(x, torch.Tensor) else np.zeros_like(x)


def _add_index(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(i + j for i, j in zip(a, b))


def _index_factorial(alpha: MultiIndex) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def downward_closure(orders: Iterable[MultiIndex]) -> FrozenSet[MultiIndex]:
    """every multi-index componentwise below some requested one."""
    closure = set()
    for alpha in orders:
        for beta in itertools.product(*(range(a + 1) for a in alpha)):
            closure.add(tuple(beta))
    return frozenset(closure)


def _tanh_derivative_polys(order: int) -> List[np.ndarray]:
    # d^k tanh / dx^k = p_k(tanh), with p_{k+1} = p_k'(y) (1 - y^2)
    polys = [np.array([0.0, 1.0])]
    for _ in range(order):
        polys.append(npoly.polymul(npoly.polyder(polys[-1]), [1.0, 0.0, -1.0]))
    return polys


_TANH_POLYS = _tanh_derivative_polys(MAX_ORDER)


def _horner(coeffs: np.ndarray, y: Array) -> Array:
    result = _zeros_like(y) + coeffs[-1]
    for c in coeffs[-2::-1]:
        result = result * y + c
    return result


class Jet:
    """
    truncated taylor expansion of a field in the tagged input variables.

    coefficients are normalized (c_alpha = d^alpha f / alpha!) and stored
    sparsely; a missing multi-index means a zero coefficient. products are
    truncated to a downward-closed index set, which keeps them exact.
    """

    __slots__ = ('coeffs', 'index_set', 'nvars')
    # make numpy scalars defer to the reflected jet operators
    __array_ufunc__ = None

    def __init__(self, coeffs: Dict[MultiIndex, Array], index_set: FrozenSet[MultiIndex], nvars: int):
        self.coeffs = coeffs
        self.index_set = index_set
        self.nvars = nvars

    # construction

    @classmethod
    def seed(cls, points: Array, index_set: Iterable[MultiIndex]) -> 'Jet':
        """
        jet of the identity map at a batch of points.

        args:
            points: array of shape (N, d), one column per tagged variable
            index_set: multi-indices to carry (closed downward automatically)

        returns:
            jet whose value is points and whose first-order terms are unit vectors
        """
        nvars = points.shape[-1]
        closure = downward_closure(index_set)
        zero = (0,) * nvars
        coeffs = {zero: points}
        for i in range(nvars):
            unit = tuple(1 if j == i else 0 for j in range(nvars))
            if unit in closure:
                c = _zeros_like(points)
                c[..., i] = 1.0
                coeffs[unit] = c
        return cls(coeffs, closure, nvars)

    @property
    def value(self) -> Array:
        return self.coeffs[(0,) * self.nvars]

    @property
    def max_order(self) -> int:
        return max(sum(alpha) for alpha in self.index_set)

    def derivative(self, alpha: MultiIndex) -> Array:
        """partial derivative d^alpha of the represented field."""
        if alpha not in self.index_set:
            raise UnsupportedOrderError(f"multi-index {alpha} is not carried by this jet")
        if alpha not in self.coeffs:
            return _zeros_like(self.value)
        return self.coeffs[alpha] * _index_factorial(alpha)

    def _like(self, coeffs: Dict[MultiIndex, Array]) -> 'Jet':
        return Jet(coeffs, self.index_set, self.nvars)

    def _map(self, fn: Callable[[Array], Array]) -> 'Jet':
        return self._like({k: fn(c) for k, c in self.coeffs.items()})

    # arithmetic

    def __add__(self, other: Any) -> 'Jet':
        if isinstance(other, Jet):
            coeffs = dict(self.coeffs)
            for k, c in other.coeffs.items():
                if k in self.index_set:
                    coeffs[k] = coeffs[k] + c if k in coeffs else c
            return self._like(coeffs)
        coeffs = dict(self.coeffs)
        zero = (0,) * self.nvars
        coeffs[zero] = coeffs[zero] + other
        return self._like(coeffs)

    __radd__ = __add__

    def __neg__(self) -> 'Jet':
        return self._map(lambda c: -c)

    def __sub__(self, other: Any) -> 'Jet':
        return self + (-other)

    def __rsub__(self, other: Any) -> 'Jet':
        return (-self) + other

    def __mul__(self, other: Any) -> 'Jet':
        if not isinstance(other, Jet):
            return self._map(lambda c: c * other)
        index_set = self.index_set & other.index_set
        coeffs: Dict[MultiIndex, Array] = {}
        for a, ca in self.coeffs.items():
            for b, cb in other.coeffs.items():
                k = _add_index(a, b)
                if k in index_set:
                    term = ca * cb
                    coeffs[k] = coeffs[k] + term if k in coeffs else term
        return Jet(coeffs, index_set, self.nvars)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> 'Jet':
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self._map(lambda c: c / other)

    def __rtruediv__(self, other: Any) -> 'Jet':
        return self.reciprocal() * other

    def __pow__(self, exponent: int) -> 'Jet':
        if not isinstance(exponent, int) or exponent < 0:
            raise UnsupportedPrimitiveError("jets support non-negative integer powers only")
        result = self._like({(0,) * self.nvars: _zeros_like(self.value) + 1.0})
        for _ in range(exponent):
            result = result * self
        return result

    def __getitem__(self, index: Any) -> 'Jet':
        return self._map(lambda c: c[index])

    def linear(self, weight: Array, bias: Array = None) -> 'Jet':
        """affine map c @ weight.T (+ bias on the value only)."""
        out = self._map(lambda c: c @ weight.T)
        if bias is not None:
            zero = (0,) * self.nvars
            out.coeffs[zero] = out.coeffs[zero] + bias
        return out

    @staticmethod
    def concat(jets: List['Jet'], axis: int = -1) -> 'Jet':
        """stack jets along a feature axis."""
        first = jets[0]
        index_set = frozenset.intersection(*(j.index_set for j in jets))
        keys = sorted(set().union(*(j.coeffs.keys() for j in jets)) & index_set)
        lib = _lib(first.value)
        coeffs = {}
        for k in keys:
            parts = [j.coeffs[k] if k in j.coeffs else _zeros_like(j.value) for j in jets]
            coeffs[k] = torch.cat(parts, dim=axis) if lib is torch else np.concatenate(parts, axis=axis)
        return Jet(coeffs, index_set, first.nvars)

    # elementwise functions

    def compose(self, derivatives: List[Array]) -> 'Jet':
        """
        f(self) given f and its derivatives evaluated at the value.

        args:
            derivatives: [f(c0), f'(c0), ..., f^(K)(c0)] with K >= max order

        returns:
            jet of the composition
        """
        zero = (0,) * self.nvars
        h = self._like({k: c for k, c in self.coeffs.items() if k != zero})
        result = self._like({zero: derivatives[0]})
        power = None
        for k in range(1, self.max_order + 1):
            power = h if power is None else power * h
            if not power.coeffs:
                break
            result = result + power * (derivatives[k] / math.factorial(k))
        return result

    def tanh(self) -> 'Jet':
        y = _lib(self.value).tanh(self.value)
        return self.compose([_horner(p, y) for p in _TANH_POLYS[: self.max_order + 1]])

    def sin(self) -> 'Jet':
        lib = _lib(self.value)
        s, c = lib.sin(self.value), lib.cos(self.value)
        cycle = [s, c, -s, -c]
        return self.compose([cycle[k % 4] for k in range(self.max_order + 1)])

    def cos(self) -> 'Jet':
        lib = _lib(self.value)
        s, c = lib.sin(self.value), lib.cos(self.value)
        cycle = [c, -s, -c, s]
        return self.compose([cycle[k % 4] for k in range(self.max_order + 1)])

    def exp(self) -> 'Jet':
        e = _lib(self.value).exp(self.value)
        return self.compose([e] * (self.max_order + 1))

    def reciprocal(self) -> 'Jet':
        y = self.value
        return self.compose([
            ((-1) ** k) * math.factorial(k) / y ** (k + 1) for k in range(self.max_order + 1)
        ])


# dispatching elementwise functions: jets, tensors, arrays and floats

def tanh(z: Any) -> Any:
    return z.tanh() if isinstance(z, Jet) else _lib(z).tanh(z)


def sin(z: Any) -> Any:
    return z.sin() if isinstance(z, Jet) else _lib(z).sin(z)


def cos(z: Any) -> Any:
    return z.cos() if isinstance(z, Jet) else _lib(z).cos(z)


def exp(z: Any) -> Any:
    return z.exp() if isinstance(z, Jet) else _lib(z).exp(z)


def cosh(z: Any) -> Any:
    return (exp(z) + exp(-z)) * 0.5


def sech(z: Any) -> Any:
    c = cosh(z)
    return c.reciprocal() if isinstance(c, Jet) else 1.0 / c


def concat(parts: List[Any]) -> Any:
    """feature-axis concatenation for jets, tensors or arrays."""
    if isinstance(parts[0], Jet):
        return Jet.concat(parts)
    if isinstance(parts[0], torch.Tensor):
        return torch.cat(parts, dim=-1)
    return np.concatenate(parts, axis=-1)


def _validate_orders(orders: Iterable[MultiIndex], nvars: int) -> List[MultiIndex]:
    orders = [tuple(int(a) for a in alpha) for alpha in orders]
    for alpha in orders:
        if len(alpha) != nvars:
            raise DimensionError(f"multi-index {alpha} does not match {nvars} input variables")
        if any(a < 0 for a in alpha):
            raise UnsupportedOrderError(f"negative order in {alpha}")
        if sum(alpha) > MAX_ORDER:
            raise UnsupportedOrderError(
                f"requested order {sum(alpha)} for {alpha}; jets carry at most {MAX_ORDER}"
            )
    return orders


def eval_with_input_derivs(
    net: Union[nn.Module, Callable[[Jet], Jet]],
    point: Array,
    orders: Iterable[MultiIndex],
) -> Dict[MultiIndex, Array]:
    """
    evaluate a field and the requested input partials at one or many points.

    args:
        net: module with forward accepting jets, or any callable jet -> jet
        point: coordinates (d,) or batch (N, d), columns ordered as the net inputs
        orders: multi-indices, each of total degree <= 4

    returns:
        dictionary multi-index -> values of shape (N, out) (or (out,) for one point)
    """
    single = point.ndim == 1
    points = point[None, :] if single else point
    orders = _validate_orders(orders, points.shape[-1])
    jet = Jet.seed(points, orders + [(0,) * points.shape[-1]])
    out = net(jet)
    results = {alpha: out.derivative(alpha) for alpha in orders}
    if single:
        results = {alpha: value[0] for alpha, value in results.items()}
    return results


def grad_params(
    loss_fn: Callable[[], torch.Tensor],
    params: Union[nn.Module, Mapping[str, torch.Tensor]],
) -> Dict[str, torch.Tensor]:
    """
    gradient of a scalar loss with respect to named parameters.

    args:
        loss_fn: zero-argument callable building the loss from the parameters
        params: module or mapping of name -> tensor with requires_grad

    returns:
        dictionary name -> gradient (zeros for parameters the loss ignores)
    """
    named = dict(params.named_parameters()) if isinstance(params, nn.Module) else dict(params)
    loss = loss_fn()
    if not isinstance(loss, torch.Tensor):
        raise UnsupportedPrimitiveError(
            f"loss must be a torch tensor built from parameter operations, got {type(loss).__name__}"
        )
    if loss.numel() != 1:
        raise DimensionError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        return {name: torch.zeros_like(p) for name, p in named.items()}
    grads = torch.autograd.grad(loss.reshape(()), list(named.values()), allow_unused=True)
    return {
        name: torch.zeros_like(p) if g is None else g
        for (name, p), g in zip(named.items(), grads)
    }
