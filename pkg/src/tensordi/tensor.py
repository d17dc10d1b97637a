"""Dense multi-mode tensors, their algebraic primitives, and series containers.

Linearization convention (used everywhere in this package): the first mode
varies fastest, i.e. ``vec`` is the Fortran-order ravel of the mode array.
Under this convention ``vec(v1 o v2 o ... o vK) = vK (x) ... (x) v1``, where
``o`` is the outer product and ``(x)`` the Kronecker product, so Khatri-Rao
chains are built last-mode-first (see :func:`kr_chain`).

Modes are 1-based throughout, matching the usual mode-k product notation.
All data is 64-bit floating point.
"""

import csv
import os

import numpy as np

from .errors import DataError, DimensionError

__all__ = [
    "Tensor",
    "TensorSeries",
    "mode_k_product",
    "multi_mode_contract",
    "outer_product",
    "khatri_rao",
    "kr_chain",
    "vectorize",
    "unfold",
    "read_series_csv",
    "read_series_dir",
    "write_series_csv",
]


class Tensor:
    """Immutable dense tensor with dims ``(d_1, ..., d_K)``.

    Parameters
    ----------
    dims : sequence of int
        Positive mode sizes, K >= 1.
    data : array_like
        ``prod(dims)`` reals in the canonical (first-mode-fastest)
        linearization order.
    """

    __slots__ = ("dims", "data")

    def __init__(self, dims, data):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise DimensionError(f"dims must be positive, got {dims}")
        data = np.ascontiguousarray(data, dtype=np.float64).reshape(-1)
        size = int(np.prod(dims))
        if data.size != size:
            raise DimensionError(
                f"data length {data.size} does not match prod(dims)={size}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @classmethod
    def from_array(cls, arr):
        """Build a Tensor from a mode-indexed ndarray."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim < 1:
            arr = arr.reshape(1)
        return cls(arr.shape, arr.ravel(order="F"))

    @property
    def array(self):
        """Mode-indexed ndarray view of the data."""
        return self.data.reshape(self.dims, order="F")

    @property
    def ndim(self):
        return len(self.dims)

    def frobenius_norm(self):
        return float(np.linalg.norm(self.data))

    def __repr__(self):
        return f"Tensor(dims={self.dims})"


class TensorSeries:
    """Ordered sequence of tensors sharing dims; the observable panel.

    Internally backed by one stacked ``(T, d_1, ..., d_K)`` array (the fast
    path used by the estimators). Immutable once constructed.
    """

    __slots__ = ("_stack", "timestamps", "_vec")

    def __init__(self, tensors, timestamps=None):
        if isinstance(tensors, np.ndarray):
            stack = np.ascontiguousarray(tensors, dtype=np.float64)
            if stack.ndim < 2:
                raise DimensionError("stacked array must be (T, d_1, ..., d_K)")
        else:
            tensors = list(tensors)
            if not tensors:
                raise DimensionError("series must contain at least one tensor")
            dims = tensors[0].dims
            for i, t in enumerate(tensors):
                if t.dims != dims:
                    raise DimensionError(
                        f"slice {i} has dims {t.dims}, expected {dims}"
                    )
            stack = np.stack([t.array for t in tensors])
        if timestamps is not None:
            timestamps = [int(s) for s in timestamps]
            if len(timestamps) != stack.shape[0]:
                raise DimensionError("timestamps length must equal series length")
        stack.flags.writeable = False
        object.__setattr__(self, "_stack", stack)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "_vec", None)

    def __setattr__(self, name, value):
        raise AttributeError("TensorSeries is immutable")

    @classmethod
    def from_stack(cls, stack, timestamps=None):
        return cls(np.asarray(stack), timestamps)

    @property
    def stack(self):
        """The (T, d_1, ..., d_K) backing array."""
        return self._stack

    @property
    def dims(self):
        return tuple(self._stack.shape[1:])

    @property
    def tensors(self):
        return [Tensor.from_array(self._stack[t]) for t in range(len(self))]

    def __len__(self):
        return self._stack.shape[0]

    def __getitem__(self, t):
        return Tensor.from_array(self._stack[t])

    @property
    def d(self):
        return int(np.prod(self.dims))

    def vec_matrix(self):
        """T x d matrix whose row t is vec(X_t) (cached)."""
        if self._vec is None:
            K = len(self.dims)
            # Fortran vec per slice == C ravel with mode axes reversed.
            mat = self._stack.transpose([0] + list(range(K, 0, -1))).reshape(
                len(self), self.d
            )
            mat = np.ascontiguousarray(mat)
            mat.flags.writeable = False
            object.__setattr__(self, "_vec", mat)
        return self._vec


def _check_mode(dims, k):
    if not 1 <= k <= len(dims):
        raise DimensionError(f"mode {k} out of range for {len(dims)}-mode tensor")


def mode_k_product(t, u, k):
    """Mode-k product of a tensor with a matrix (or contraction with a vector).

    Parameters
    ----------
    t : Tensor
    u : ndarray, shape (r_k, d_k) or (d_k,)
        Matrix whose rows combine mode-k fibers; a vector contracts the mode
        away entirely.
    k : int
        1-based mode index.

    Returns
    -------
    Tensor (u matrix; mode k resized to r_k) or Tensor/scalar (u vector;
    mode k removed, scalar when the input had a single mode).
    """
    _check_mode(t.dims, k)
    u = np.asarray(u, dtype=np.float64)
    if u.ndim not in (1, 2):
        raise DimensionError("u must be a vector or a matrix")
    if u.shape[-1] != t.dims[k - 1]:
        raise DimensionError(
            f"mode {k} has size {t.dims[k - 1]} but u has {u.shape[-1]} columns"
        )
    arr = np.tensordot(t.array, u, axes=([k - 1], [u.ndim - 1]))
    if u.ndim == 1:
        if arr.ndim == 0:
            return float(arr)
        return Tensor.from_array(arr)
    # tensordot appends the new axis last; restore it to position k-1
    arr = np.moveaxis(arr, -1, k - 1)
    return Tensor.from_array(arr)


def multi_mode_contract(t, vectors):
    """Full contraction of a K-mode tensor with one vector per mode -> scalar."""
    if len(vectors) != t.ndim:
        raise DimensionError(
            f"need {t.ndim} vectors, got {len(vectors)}"
        )
    arr = t.array
    for k, v in enumerate(vectors):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or v.size != t.dims[k]:
            raise DimensionError(
                f"vector for mode {k + 1} has length {v.size}, expected {t.dims[k]}"
            )
    out = arr
    for v in reversed(vectors):
        out = out @ np.asarray(v, dtype=np.float64)
    return float(out)


def multi_mode_contract_series(series, vectors):
    """Vectorized multi_mode_contract over a whole series -> (T,) array."""
    out = series.stack
    for v in reversed(vectors):
        out = out @ np.asarray(v, dtype=np.float64)
    return out


def outer_product(vectors):
    """Outer product of K vectors: entry (i_1, ..., i_K) = prod_k v_k[i_k]."""
    if not vectors:
        raise DimensionError("outer_product needs at least one vector")
    arrs = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if any(a.size == 0 for a in arrs):
        raise DimensionError("outer_product vectors must be nonempty")
    out = arrs[0]
    for v in arrs[1:]:
        out = np.multiply.outer(out, v)
    return Tensor.from_array(out)


def khatri_rao(a, b):
    """Column-wise Kronecker product; column i is kron(a[:, i], b[:, i])."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("khatri_rao operands must be matrices")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    r = a.shape[1]
    out = a[:, None, :] * b[None, :, :]
    return out.reshape(a.shape[0] * b.shape[0], r)


def kr_chain(mats):
    """Khatri-Rao chain of per-mode matrices [M_1, ..., M_K].

    Column i of the result is ``M_K[:, i] (x) ... (x) M_1[:, i]``, i.e. the
    canonical vec of the rank-1 tensor built from the i-th columns.
    """
    mats = list(mats)
    if not mats:
        raise DimensionError("kr_chain needs at least one matrix")
    out = np.asarray(mats[0], dtype=np.float64)
    for m in mats[1:]:
        out = khatri_rao(np.asarray(m, dtype=np.float64), out)
    return out


def vectorize(t):
    """Canonical vec of a tensor (first mode fastest)."""
    return np.array(t.data, copy=True)


def unfold(t, k):
    """Mode-k unfolding: d_k x (d / d_k) matrix.

    Rows index mode k; columns run over the remaining modes in canonical
    (first-remaining-mode-fastest) order.
    """
    _check_mode(t.dims, k)
    arr = np.moveaxis(t.array, k - 1, 0)
    return arr.reshape(t.dims[k - 1], -1, order="F")


def unfold_series(series, k):
    """Stacked mode-k unfoldings: (T, d_k, d/d_k) array (fast path).

    Slice t equals ``unfold(series[t], k)``.
    """
    _check_mode(series.dims, k)
    arr = np.moveaxis(series.stack, k, 1)  # (T, d_k, remaining modes in order)
    if arr.ndim > 3:
        # reverse the remaining-mode axes so a C ravel equals the F ravel
        arr = arr.transpose([0, 1] + list(range(arr.ndim - 1, 1, -1)))
    return arr.reshape(arr.shape[0], arr.shape[1], -1)


def _parse_dims_header(row):
    if row and row[0].strip().lstrip("#").strip().lower() == "dims":
        try:
            return tuple(int(x) for x in row[1:] if x.strip() != "")
        except ValueError as exc:
            raise DataError(f"malformed dims header: {row}") from exc
    return None


def read_series_csv(path, dims=None):
    """Read a TensorSeries from CSV: one row per time index, d columns in
    canonical linearization order.

    An optional first row ``dims,d1,d2,...`` (or ``# dims,...``) carries the
    mode sizes; otherwise ``dims`` must be supplied.
    """
    rows = []
    header_dims = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, row in enumerate(reader):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if i == 0:
                header_dims = _parse_dims_header(row)
                if header_dims is not None:
                    continue
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric value on line {i + 1}") from exc
    if header_dims is not None:
        dims = header_dims
    if dims is None:
        raise DataError(f"{path}: no dims header and no dims argument")
    dims = tuple(int(d) for d in dims)
    if not rows:
        raise DataError(f"{path}: no data rows")
    d = int(np.prod(dims))
    lengths = {len(r) for r in rows}
    if lengths != {d}:
        raise DataError(
            f"{path}: rows have {sorted(lengths)} columns, expected {d}"
        )
    mat = np.asarray(rows, dtype=np.float64)
    K = len(dims)
    stack = mat.reshape(len(rows), *dims[::-1]).transpose(
        [0] + list(range(K, 0, -1))
    )
    return TensorSeries.from_stack(stack, timestamps=list(range(len(rows))))


def read_series_dir(path):
    """Read a K=2 TensorSeries from a directory of per-slice CSV matrices.

    Files are taken in lexicographic order; each file is a d1 x d2 matrix.
    """
    names = sorted(
        n for n in os.listdir(path) if n.lower().endswith(".csv")
    )
    if not names:
        raise DataError(f"{path}: no CSV files found")
    slices = []
    for name in names:
        full = os.path.join(path, name)
        try:
            mat = np.loadtxt(full, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{full}: could not parse matrix") from exc
        slices.append(mat)
    shapes = {m.shape for m in slices}
    if len(shapes) != 1:
        raise DataError(f"{path}: slice shapes differ: {sorted(shapes)}")
    return TensorSeries.from_stack(np.stack(slices), timestamps=list(range(len(slices))))


def write_series_csv(series, path, with_header=True):
    """Write a TensorSeries in the canonical CSV layout (see read_series_csv)."""
    mat = series.vec_matrix()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if with_header:
            writer.writerow(["dims"] + [str(d) for d in series.dims])
        for row in mat:
            writer.writerow([repr(float(x)) for x in row])
