"""Uniform sampling over learned search spaces.

Ellipsoids are sampled by drawing uniformly in the unit ball, mapping through
the inverse of the ellipsoid's affine map, and rejecting draws that fall
outside the original parameter box.
"""
from __future__ import annotations

import hashlib
from typing import Any, Protocol

import numpy as np

from .core import BoxSpace, EllipsoidSpace, ParameterSchema

__all__ = [
    "RngStream",
    "SamplingError",
    "sample_unit_ball",
    "sample_box",
    "sample_ellipsoid",
    "decode_config",
    "Sampler",
    "BoxSampler",
    "EllipsoidSampler",
    "make_sampler",
]

MAX_ATTEMPTS = 10_000
_MASK64 = (1 << 64) - 1


class SamplingError(RuntimeError):
    pass


class RngStream:
    """Counter-based generator keyed by ``(seed, stream)``.

    Backed by numpy's Philox, whose output for a given key is identical on
    every platform. Distinct stream ids give independent, non-overlapping
    sequences, so parallel workers can each own one.
    """

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def derive(self, *labels: Any) -> "RngStream":
        """Child stream whose id is a stable hash of this stream and ``labels``."""
        text = repr((self.stream,) + tuple(labels)).encode()
        sid = int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")
        return RngStream(self.seed, sid)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def sample_unit_ball(rng: RngStream, p: int) -> np.ndarray:
    """Uniform draw from the closed unit ball in ``p`` dimensions."""
    if p < 1:
        raise ValueError("dimension must be at least 1")
    while True:
        z = rng.normal(p)
        nz = np.linalg.norm(z)
        if nz > 0.0:
            break
    r = rng.uniform()
    return (r ** (1.0 / p) / nz) * z


def sample_box(space: BoxSpace, rng: RngStream) -> np.ndarray:
    u = rng.uniform(size=space.p)
    x = space.lower + u * (space.upper - space.lower)
    # Guard against rounding past the upper edge; zero-width dims stay constant.
    return np.clip(x, space.lower, space.upper)


def sample_ellipsoid(space: EllipsoidSpace, schema: ParameterSchema, rng: RngStream,
                     max_attempts: int = MAX_ATTEMPTS) -> np.ndarray:
    """Uniform draw from the ellipsoid intersected with the schema's box."""
    return EllipsoidSampler(space, schema, max_attempts).sample_vector(rng)


def _round_half_away(v: float) -> float:
    return float(np.sign(v) * np.floor(abs(v) + 0.5))


def decode_config(x, schema: ParameterSchema, rng: RngStream | None = None) -> dict[str, Any]:
    """Turn a numeric vector into a full configuration.

    Integer dimensions are rounded half away from zero and clipped to their
    range; categorical values are drawn uniformly from the original domains.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.p,):
        raise ValueError(f"expected a vector of length {schema.p}, got shape {x.shape}")
    out: dict[str, Any] = {}
    for v, d in zip(x, schema.dims):
        v = min(max(float(v), d.lower), d.upper)
        if d.is_integer:
            out[d.name] = int(min(max(_round_half_away(v), np.ceil(d.lower)), np.floor(d.upper)))
        else:
            out[d.name] = v
    if schema.cats:
        if rng is None:
            raise ValueError("an RngStream is required to draw categorical values")
        for c in schema.cats:
            out[c.name] = c.values[int(rng.integers(len(c.values)))]
    return out


class Sampler(Protocol):
    schema: ParameterSchema

    def sample_vector(self, rng: RngStream) -> np.ndarray: ...

    def sample(self, rng: RngStream) -> dict[str, Any]: ...


class BoxSampler:
    def __init__(self, space: BoxSpace, schema: ParameterSchema):
        if space.p != schema.p:
            raise ValueError(f"box has {space.p} dimensions, schema has {schema.p}")
        self.space = space
        self.schema = schema

    def sample_vector(self, rng: RngStream) -> np.ndarray:
        return sample_box(self.space, rng)

    def sample(self, rng: RngStream) -> dict[str, Any]:
        return decode_config(self.sample_vector(rng), self.schema, rng)


class EllipsoidSampler:
    def __init__(self, space: EllipsoidSpace, schema: ParameterSchema, max_attempts: int = MAX_ATTEMPTS):
        if space.p != schema.p:
            raise ValueError(f"ellipsoid has {space.p} dimensions, schema has {schema.p}")
        if max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        self.space = space
        self.schema = schema
        self.max_attempts = max_attempts
        self._A_inv = np.linalg.inv(space.A)
        self._lo = schema.lower
        self._hi = schema.upper
        self.draws = 0
        self.accepted = 0

    def sample_vector(self, rng: RngStream) -> np.ndarray:
        for _ in range(self.max_attempts):
            t = sample_unit_ball(rng, self.space.p)
            x = self._A_inv @ (t - self.space.b)
            self.draws += 1
            if np.all(x >= self._lo) and np.all(x <= self._hi):
                self.accepted += 1
                return x
        raise self._exhausted()

    def sample_vectors(self, rng: RngStream, n: int) -> np.ndarray:
        """``n`` accepted draws as an ``(n, p)`` array, generated in blocks."""
        p = self.space.p
        kept, got, misses = [], 0, 0
        while got < n:
            m = max(2 * (n - got), 256)
            Z = rng.normal((m, p))
            nz = np.linalg.norm(Z, axis=1)
            r = rng.uniform(size=m)
            ok = nz > 0.0
            T = Z[ok] * (r[ok] ** (1.0 / p) / nz[ok])[:, None]
            X = (T - self.space.b) @ self._A_inv.T
            inside = np.all((X >= self._lo) & (X <= self._hi), axis=1)
            self.draws += len(X)
            self.accepted += int(inside.sum())
            if inside.any():
                misses = 0
            else:
                misses += len(X)
                if misses >= self.max_attempts:
                    raise self._exhausted()
            kept.append(X[inside])
            got += int(inside.sum())
        return np.concatenate(kept)[:n] if kept else np.empty((0, p))

    def _exhausted(self) -> SamplingError:
        return SamplingError(
            f"ellipsoid has negligible intersection with original space "
            f"({self.max_attempts} draws rejected)"
        )

    def sample(self, rng: RngStream) -> dict[str, Any]:
        return decode_config(self.sample_vector(rng), self.schema, rng)


def make_sampler(space: BoxSpace | EllipsoidSpace | None, schema: ParameterSchema,
                 max_attempts: int = MAX_ATTEMPTS):
    """Sampler for a learned space, or for the schema's own box when ``space`` is None."""
    if space is None:
        return BoxSampler(BoxSpace(schema.lower, schema.upper), schema)
    if isinstance(space, BoxSpace):
        return BoxSampler(space, schema)
    return EllipsoidSampler(space, schema, max_attempts)
