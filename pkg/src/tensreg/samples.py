"""Two-pass sample streams of (response, covariate tensor) pairs.

Every source supports repeated sequential iteration that yields
bit-identical samples on each pass, plus ``subrange`` views so shards and
split fits can address contiguous sample windows without copying.

Three kinds are provided:

* :class:`InMemorySamples` -- responses and vectorized covariates held in
  RAM; the natural choice for small problems and oracles.
* :class:`FileSamples` -- a flat little-endian binary file (magic
  ``ISMP``) holding a header and n records of ``y`` followed by the
  column-major covariate entries; streamed in chunks.
* :class:`SeededGaussianSource` -- nothing stored at all: sample i is
  regenerated on demand from a counter-based generator keyed by
  (stream key, sample index), so any pass or shard sees identical data.
"""

import struct
from hashlib import blake2b

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .errors import DataError

__all__ = [
    "SampleSource",
    "InMemorySamples",
    "FileSamples",
    "SeededGaussianSource",
    "write_sample_file",
    "sample_checksum",
]

SAMPLE_MAGIC = b"ISMP"
SAMPLE_FORMAT_VERSION = 1

# Philox counter stride between samples: index i starts at counter i << 192,
# leaving 2**192 draws per sample before streams could touch.
_COUNTER_SHIFT = 192


def _key_from_seed(seed, stream=0):
    """Two 64-bit Philox key words derived from (seed, stream).

    ``seed`` may be an int or a numpy ``SeedSequence``; distinct ``stream``
    tags give statistically independent keys for the same seed.
    """
    if isinstance(seed, SeedSequence):
        base = seed
    else:
        base = SeedSequence(int(seed))
    return SeedSequence(
        entropy=base.entropy, spawn_key=tuple(base.spawn_key) + (int(stream),)
    ).generate_state(2, np.uint64)


def counter_rng(key, index):
    """Generator for sample ``index``: Philox keyed by ``key`` with the
    counter pre-advanced to ``index << 192``."""
    return Generator(Philox(key=key, counter=int(index) << _COUNTER_SHIFT))


class SampleSource:
    """Base class: a sized, re-iterable stream of (y, X) pairs."""

    dims = ()
    n = 0

    def __len__(self):
        return self.n

    def sample(self, i):
        raise NotImplementedError

    def iter_samples(self, start=0, stop=None):
        stop = self.n if stop is None else stop
        for i in range(start, stop):
            yield self.sample(i)

    def iter_vec_batches(self, batch, start=0, stop=None):
        """Yield (y_block, X_block) with X rows vectorized, ``batch`` rows at
        a time (the last block may be shorter)."""
        stop = self.n if stop is None else stop
        q = int(np.prod(self.dims))
        lo = start
        while lo < stop:
            hi = min(lo + batch, stop)
            ys = np.empty(hi - lo)
            xs = np.empty((hi - lo, q))
            for j, (y, x) in enumerate(self.iter_samples(lo, hi)):
                ys[j] = y
                xs[j] = x.reshape(-1, order="F")
            yield ys, xs
            lo = hi

    def subrange(self, start, stop):
        if not 0 <= start <= stop <= self.n:
            raise ValueError(f"bad subrange [{start}, {stop}) for n={self.n}")
        return _SourceSlice(self, start, stop)


class _SourceSlice(SampleSource):
    """Contiguous window into another source."""

    def __init__(self, parent, start, stop):
        self.parent = parent
        self.start = start
        self.n = stop - start
        self.dims = parent.dims

    def sample(self, i):
        if not 0 <= i < self.n:
            raise IndexError(i)
        return self.parent.sample(self.start + i)

    def iter_samples(self, start=0, stop=None):
        stop = self.n if stop is None else stop
        return self.parent.iter_samples(self.start + start, self.start + stop)

    def subrange(self, start, stop):
        if not 0 <= start <= stop <= self.n:
            raise ValueError(f"bad subrange [{start}, {stop}) for n={self.n}")
        return _SourceSlice(self.parent, self.start + start, self.start + stop)


class InMemorySamples(SampleSource):
    """Samples held in RAM as a response vector + matrix of vectorized
    covariates (one row per sample, column-major entry order)."""

    def __init__(self, responses, vec_covariates, dims):
        self.responses = np.asarray(responses, dtype=np.float64)
        self.vecs = np.asarray(vec_covariates, dtype=np.float64)
        self.dims = tuple(int(d) for d in dims)
        if self.vecs.ndim != 2 or self.vecs.shape[1] != int(np.prod(self.dims)):
            raise ValueError("covariate matrix width does not match dims")
        if self.responses.shape != (self.vecs.shape[0],):
            raise ValueError("response/covariate count mismatch")
        if not (np.all(np.isfinite(self.responses)) and np.all(np.isfinite(self.vecs))):
            raise DataError("non-finite sample data")
        self.n = self.vecs.shape[0]

    @classmethod
    def from_pairs(cls, pairs, dims):
        ys, xs = [], []
        for y, x in pairs:
            ys.append(float(y))
            xs.append(np.reshape(np.asarray(x, dtype=np.float64), -1, order="F"))
        return cls(np.array(ys), np.array(xs), dims)

    @classmethod
    def materialize(cls, source):
        ys = np.empty(source.n)
        xs = np.empty((source.n, int(np.prod(source.dims))))
        for i, (y, x) in enumerate(source.iter_samples()):
            ys[i] = y
            xs[i] = x.reshape(-1, order="F")
        return cls(ys, xs, source.dims)

    def sample(self, i):
        return float(self.responses[i]), self.vecs[i].reshape(self.dims, order="F")

    def iter_vec_batches(self, batch, start=0, stop=None):
        stop = self.n if stop is None else stop
        lo = start
        while lo < stop:
            hi = min(lo + batch, stop)
            yield self.responses[lo:hi], self.vecs[lo:hi]
            lo = hi


def write_sample_file(path, source):
    """Serialize a source to the flat ``ISMP`` record format."""
    dims = source.dims
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(struct.pack("<II", SAMPLE_FORMAT_VERSION, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack("<Q", source.n))
        for y, x in source.iter_samples():
            fh.write(struct.pack("<d", y))
            fh.write(x.reshape(-1, order="F").astype("<f8").tobytes())


class FileSamples(SampleSource):
    """Reader for the ``ISMP`` sample file format (little-endian):

    magic ``ISMP`` | u32 version | u32 d | u32 dims[d] | u64 n |
    n records of (f64 y, prod(dims) f64 covariate entries, column-major).
    """

    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            if fh.read(4) != SAMPLE_MAGIC:
                raise ValueError(f"{path}: not a sample file (bad magic)")
            version, d = struct.unpack("<II", fh.read(8))
            if version != SAMPLE_FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported sample format v{version}")
            self.dims = struct.unpack(f"<{d}I", fh.read(4 * d))
            (self.n,) = struct.unpack("<Q", fh.read(8))
            self._header_bytes = fh.tell()
        self._q = int(np.prod(self.dims))
        self._record_floats = 1 + self._q

    def sample(self, i):
        if not 0 <= i < self.n:
            raise IndexError(i)
        with open(self.path, "rb") as fh:
            fh.seek(self._header_bytes + 8 * i * self._record_floats)
            rec = np.fromfile(fh, dtype="<f8", count=self._record_floats)
        return float(rec[0]), rec[1:].reshape(self.dims, order="F")

    def iter_samples(self, start=0, stop=None):
        stop = self.n if stop is None else stop
        for ys, xs in self.iter_vec_batches(256, start, stop):
            for y, row in zip(ys, xs):
                yield float(y), row.reshape(self.dims, order="F")

    def iter_vec_batches(self, batch, start=0, stop=None):
        stop = self.n if stop is None else stop
        with open(self.path, "rb") as fh:
            fh.seek(self._header_bytes + 8 * start * self._record_floats)
            lo = start
            while lo < stop:
                count = min(batch, stop - lo)
                rec = np.fromfile(fh, dtype="<f8", count=count * self._record_floats)
                rec = rec.reshape(count, self._record_floats)
                yield rec[:, 0].copy(), rec[:, 1:].copy()
                lo += count


class SeededGaussianSource(SampleSource):
    """Gaussian-design samples regenerated from a counter-based generator.

    Sample i draws its covariate entries (standard normal, filled in
    column-major order) and then one noise variate from a Philox stream
    keyed by the source key with counter i << 192, so iteration order,
    pass count, and shard boundaries never change the data:

        y_i = <X_i, coeff> + sigma * eps_i.

    The per-index regeneration is what lets shards re-derive their window
    of a dataset from (seed, index) alone.
    """

    def __init__(self, coeff, n, sigma, seed):
        self.coeff = np.asarray(coeff, dtype=np.float64)
        self.dims = self.coeff.shape
        self.n = int(n)
        self.sigma = float(sigma)
        if self.n < 1:
            raise ValueError("need at least one sample")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self._key = _key_from_seed(seed, stream=1)
        self._coeff_vec = self.coeff.reshape(-1, order="F")
        self._q = self._coeff_vec.size

    def sample(self, i):
        if not 0 <= i < self.n:
            raise IndexError(i)
        rng = counter_rng(self._key, i)
        flat = rng.standard_normal(self._q)
        y = float(flat @ self._coeff_vec)
        if self.sigma > 0:
            y += self.sigma * rng.standard_normal()
        return y, flat.reshape(self.dims, order="F")

    def iter_vec_batches(self, batch, start=0, stop=None):
        stop = self.n if stop is None else stop
        lo = start
        while lo < stop:
            hi = min(lo + batch, stop)
            ys = np.empty(hi - lo)
            xs = np.empty((hi - lo, self._q))
            for j in range(lo, hi):
                rng = counter_rng(self._key, j)
                flat = rng.standard_normal(self._q)
                y = float(flat @ self._coeff_vec)
                if self.sigma > 0:
                    y += self.sigma * rng.standard_normal()
                ys[j - lo] = y
                xs[j - lo] = flat
            yield ys, xs
            lo = hi


def sample_checksum(y, x):
    """Stable digest of one sample, used to confirm regeneration fidelity."""
    h = blake2b(digest_size=16)
    h.update(struct.pack("<d", float(y)))
    h.update(np.asarray(x, dtype=np.float64).reshape(-1, order="F").tobytes())
    return h.hexdigest()
