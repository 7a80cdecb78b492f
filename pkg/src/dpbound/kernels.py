"""Stationary kernels on real vectors and their Gram matrices.

Both families are normalized so that k(x, x) = 1:

    squared exponential      k(x, x') = exp(-sum_d (x_d - x'_d)^2 / (2 l_d^2))
    inverse multiquadric     k(x, x') = (1 + sum_d (x_d - x'_d)^2 / l_d^2)^beta,  beta = -1/2
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

DEFAULT_JITTER = 1e-10


class KernelFamily(str, Enum):
    SQUARED_EXPONENTIAL = "se"
    INVERSE_MULTIQUADRIC = "imq"

    @classmethod
    def parse(cls, name: Union[str, "KernelFamily"]) -> "KernelFamily":
        if isinstance(name, KernelFamily):
            return name
        key = str(name).strip().lower()
        aliases = {
            "se": cls.SQUARED_EXPONENTIAL,
            "rbf": cls.SQUARED_EXPONENTIAL,
            "sqexp": cls.SQUARED_EXPONENTIAL,
            "squaredexponential": cls.SQUARED_EXPONENTIAL,
            "imq": cls.INVERSE_MULTIQUADRIC,
            "inversemultiquadric": cls.INVERSE_MULTIQUADRIC,
        }
        if key not in aliases:
            raise ValueError(f"unknown kernel family {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family with per-dimension (or one shared) lengthscale."""

    family: KernelFamily
    lengthscales: tuple[float, ...]
    imq_exponent: float = -0.5
    jitter: float = DEFAULT_JITTER

    def __init__(
        self,
        family: Union[str, KernelFamily],
        lengthscales: Union[float, Sequence[float]],
        imq_exponent: float = -0.5,
        jitter: float = DEFAULT_JITTER,
    ) -> None:
        ls = tuple(float(v) for v in np.atleast_1d(np.asarray(lengthscales, dtype=float)))
        if len(ls) == 0:
            raise ValueError("at least one lengthscale is required")
        if not all(np.isfinite(v) and v > 0 for v in ls):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not -1.0 < imq_exponent < 0.0:
            raise ValueError("imq_exponent must lie in (-1, 0)")
        if jitter < 0:
            raise ValueError("jitter must be nonnegative")
        object.__setattr__(self, "family", KernelFamily.parse(family))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "imq_exponent", float(imq_exponent))
        object.__setattr__(self, "jitter", float(jitter))

    @classmethod
    def se(cls, lengthscales, jitter: float = DEFAULT_JITTER) -> "KernelSpec":
        return cls(KernelFamily.SQUARED_EXPONENTIAL, lengthscales, jitter=jitter)

    @classmethod
    def imq(cls, lengthscales, jitter: float = DEFAULT_JITTER) -> "KernelSpec":
        return cls(KernelFamily.INVERSE_MULTIQUADRIC, lengthscales, jitter=jitter)

    @property
    def is_shared(self) -> bool:
        return len(self.lengthscales) == 1

    def scale_for(self, dim: int) -> np.ndarray:
        """Lengthscale vector broadcast to ``dim`` columns."""
        if self.is_shared:
            return np.full(dim, self.lengthscales[0])
        if len(self.lengthscales) != dim:
            raise ValueError(
                f"kernel has {len(self.lengthscales)} lengthscales but points have {dim} dimensions"
            )
        return np.asarray(self.lengthscales)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "lengthscales": list(self.lengthscales),
            "imq_exponent": self.imq_exponent,
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(
            d["family"],
            d["lengthscales"],
            imq_exponent=d.get("imq_exponent", -0.5),
            jitter=d.get("jitter", DEFAULT_JITTER),
        )


def as_points(X) -> np.ndarray:
    """Coerce scalars, vectors and matrices to an (n, d) float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        return X.reshape(1, 1)
    if X.ndim == 1:
        return X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got shape {X.shape}")
    return X


def _from_sqdist(k: KernelSpec, d2: np.ndarray) -> np.ndarray:
    if k.family is KernelFamily.SQUARED_EXPONENTIAL:
        return np.exp(-0.5 * d2)
    return (1.0 + d2) ** k.imq_exponent


def scaled_sqdist(k: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise squared distances after dividing each column by its lengthscale."""
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    ls = k.scale_for(X.shape[1])
    Xs = X / ls
    Ys = Y / ls
    # Direct differences are exact at zero distance, which matters for near-delta kernels.
    if Xs.shape[0] * Ys.shape[0] * Xs.shape[1] <= 4_000_000:
        diff = Xs[:, None, :] - Ys[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    d2 = (Xs**2).sum(1)[:, None] + (Ys**2).sum(1)[None, :] - 2.0 * Xs @ Ys.T
    return np.maximum(d2, 0.0)


def eval_kernel(k: KernelSpec, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(gram(k, x[None, :], x2[None, :])[0, 0])


def gram(k: KernelSpec, X, Y=None, add_jitter: bool = False) -> np.ndarray:
    """Kernel matrix between rows of X and rows of Y (Y defaults to X).

    Jitter is added to the diagonal only for the square X-with-itself case.
    """
    X = as_points(X)
    if Y is None:
        Y = X
    else:
        Y = as_points(Y)
    same = Y is X or (Y.shape == X.shape and np.array_equal(X, Y))
    K = _from_sqdist(k, scaled_sqdist(k, X, Y))
    if same:
        K = 0.5 * (K + K.T)
        if add_jitter and k.jitter > 0:
            K[np.diag_indices_from(K)] += k.jitter
    return K
