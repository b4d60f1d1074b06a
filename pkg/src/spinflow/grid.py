"""Uniform periodic lattice on the unit torus [0, 1)^n.

Fields are plain numpy arrays with component axes first and the ``n`` grid
axes last:

=========  ===============================  =========
kind       shape                            dtype
=========  ===============================  =========
scalar     ``grid``                         float
vector     ``(n,) + grid``                  float
sym2       ``(n, n) + grid``                float
tensor3    ``(n, n, n) + grid``             float
spinor     ``(m,) + grid``                  complex
=========  ===============================  =========
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

FIELD_RANKS = {"scalar": 0, "vector": 1, "sym2": 2, "tensor3": 3, "spinor": 1}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n: int
    res: int

    def __post_init__(self):
        if self.n not in (2, 3):
            raise GridError(f"unsupported dimension n={self.n}")
        if self.res < 8 or self.res & (self.res - 1):
            raise GridError(f"res must be a power of two >= 8, got {self.res}")

    @property
    def h(self) -> float:
        return 1.0 / self.res

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.res,) * self.n

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.n, 0))

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates, shape ``(n,) + grid``."""
        x = np.arange(self.res) * self.h
        return np.array(np.meshgrid(*([x] * self.n), indexing="ij"))

    @cached_property
    def _wavenumbers(self) -> np.ndarray:
        # angular wavenumber 2*pi*k with the Nyquist mode zeroed for odd derivatives
        k = np.fft.fftfreq(self.res, d=self.h) * 2 * np.pi
        k[self.res // 2] = 0.0
        return k

    def check(self, field: np.ndarray, rank: int = 0) -> None:
        if field.shape[field.ndim - self.n:] != self.shape or field.ndim != rank + self.n:
            raise GridError(
                f"field of shape {field.shape} is not a rank-{rank} field on {self}"
            )

    def derivative(self, field: np.ndarray, axis: int, scheme: str = "spectral") -> np.ndarray:
        """Periodic partial derivative of every component along coordinate ``axis``."""
        if not 0 <= axis < self.n:
            raise GridError(f"axis {axis} out of range for n={self.n}")
        ax = field.ndim - self.n + axis
        if scheme == "spectral":
            shape = [1] * field.ndim
            shape[ax] = self.res
            ik = 1j * self._wavenumbers.reshape(shape)
            out = np.fft.ifft(np.fft.fft(field, axis=ax) * ik, axis=ax)
            return out if np.iscomplexobj(field) else out.real
        if scheme == "fd4":
            r = lambda s: np.roll(field, -s, axis=ax)
            return (8 * (r(1) - r(-1)) - (r(2) - r(-2))) / (12 * self.h)
        raise GridError(f"unknown scheme {scheme!r}")

    def gradient(self, field: np.ndarray, scheme: str = "spectral") -> np.ndarray:
        """Stack of all partials: ``out[i, ...] = d_i field``."""
        return np.stack([self.derivative(field, i, scheme) for i in range(self.n)])

    def integrate(self, phi: np.ndarray, density: np.ndarray) -> float:
        """Rectangle rule ``h^n * sum(phi * density)``."""
        if phi.shape != self.shape or density.shape != self.shape:
            raise GridError("integrand and measure must be scalar fields on this grid")
        if np.iscomplexobj(phi) or np.iscomplexobj(density):
            raise GridError("integrate real and imaginary parts separately")
        return float(np.sum(phi * density) * self.h**self.n)

    def weighted_measure(self, g: np.ndarray, f: np.ndarray, tau: float) -> np.ndarray:
        """Density of ``(4 pi tau)^{-n/2} e^{-f} dmu_g``."""
        if tau <= 0:
            raise ValueError("tau must be positive")
        det = np.linalg.det(pointwise(g, 2))
        if np.any(det <= 0):
            raise GridError("metric is not positive definite")
        return (4 * np.pi * tau) ** (-self.n / 2) * np.exp(-f) * np.sqrt(det)

    def random_band_limited(
        self, seed: int, kmax: int, amp: float, kind: str = "scalar", spd: bool = False
    ) -> np.ndarray:
        """Seeded real field with Fourier support in ``[-kmax, kmax]^n``.

        Every component is a random trigonometric polynomial scaled so its sup
        norm is at most ``amp``.  ``kind='sym2'`` symmetrizes; with ``spd=True``
        the identity is added, giving a metric whose eigenvalues are at least
        ``1 - n*amp``.  ``kind='spinor'`` returns complex components.
        """
        if not 0 <= kmax < self.res // 2:
            raise GridError(f"kmax={kmax} must be below res/2={self.res // 2}")
        if spd and (kind != "sym2" or amp * self.n >= 1):
            raise GridError("SPD variant needs kind='sym2' and amp < 1/n")
        rng = np.random.default_rng(seed)
        ncomp = {"scalar": 1, "vector": self.n, "sym2": self.n**2,
                 "tensor3": self.n**3, "spinor": 2 ** (self.n // 2)}[kind]
        parts = 2 if kind == "spinor" else 1
        modes = np.array(np.meshgrid(*[np.arange(-kmax, kmax + 1)] * self.n, indexing="ij"))
        modes = modes.reshape(self.n, -1)
        phase = 2 * np.pi * np.tensordot(modes.T, self.coords, axes=1)
        comps = []
        for _ in range(ncomp * parts):
            a, b = rng.standard_normal((2, modes.shape[1]))
            c = np.tensordot(a, np.cos(phase), axes=1) + np.tensordot(b, np.sin(phase), axes=1)
            peak = np.max(np.abs(c))
            comps.append(c * (amp / peak) if peak > 0 else c * 0.0)
        comps = np.array(comps)
        if kind == "spinor":
            # keeps every complex component's modulus below amp
            return (comps[:ncomp] + 1j * comps[ncomp:]) / np.sqrt(2)
        out = comps.reshape((self.n,) * FIELD_RANKS[kind] + self.shape)
        if kind == "sym2":
            out = 0.5 * (out + np.swapaxes(out, 0, 1))
            if spd:
                out = out + identity_field(self)
        return out


def pointwise(a: np.ndarray, k: int) -> np.ndarray:
    """Move the first ``k`` (component) axes to the end for batched linear algebra."""
    return np.moveaxis(a, tuple(range(k)), tuple(range(-k, 0)))


def fieldwise(a: np.ndarray, k: int) -> np.ndarray:
    """Inverse of :func:`pointwise`."""
    return np.moveaxis(a, tuple(range(-k, 0)), tuple(range(k)))


def identity_field(grid: Grid) -> np.ndarray:
    return np.broadcast_to(
        np.eye(grid.n).reshape((grid.n, grid.n) + (1,) * grid.n), (grid.n, grid.n) + grid.shape
    ).copy()


def constant_field(grid: Grid, value) -> np.ndarray:
    value = np.asarray(value)
    return np.broadcast_to(value.reshape(value.shape + (1,) * grid.n), value.shape + grid.shape).copy()


# -- serialization -----------------------------------------------------------

def save_field(path: str | Path, field: np.ndarray, grid: Grid, kind: str) -> None:
    """Write ``<path>.bin`` (row-major little-endian doubles, complex interleaved)
    and ``<path>.json`` (header)."""
    path = Path(path)
    if kind not in FIELD_RANKS:
        raise GridError(f"unknown field kind {kind!r}")
    data = np.ascontiguousarray(field)
    header = {"n": grid.n, "res": grid.res, "kind": kind,
              "shape": list(data.shape), "complex": bool(np.iscomplexobj(data))}
    if header["complex"]:
        flat = data.astype("<c16").view("<f8")
    else:
        flat = data.astype("<f8")
    path.with_suffix(".bin").write_bytes(flat.tobytes(order="C"))
    path.with_suffix(".json").write_text(json.dumps(header, sort_keys=True))


def load_field(path: str | Path) -> tuple[np.ndarray, Grid, str]:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if header["complex"]:
        raw = raw.view("<c16")
    field = raw.reshape(header["shape"]).copy()
    return field, Grid(header["n"], header["res"]), header["kind"]
