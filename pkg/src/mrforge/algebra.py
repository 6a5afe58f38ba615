"""Affine input mappings ``g(x) = gamma @ x + beta`` over the flattened model input.

A :class:`ModelInput` flattens to ``[eta (t, y, x row-major) | xs | ys | ts | G | F]``.
Mappings come in two forms:

* ``dense``: an explicit ``gamma`` matrix and ``beta`` vector, used by the search.
* ``structured``: a named catalogue transformation stored as a gather
  ``g(x)[i] = scale[i] * x[src[i]] + beta[i]``.  Every catalogue kind is a signed
  permutation/scaling, so this is exact and expands to a dense matrix on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import ModelInput

BLOCKS = ("eta", "xs", "ys", "ts", "G", "F")

PROVENANCES = ("identity", "catalogue", "discovered")


@dataclass(frozen=True)
class FlatLayout:
    nt: int
    ny: int
    nx: int

    def __post_init__(self):
        if min(self.nt, self.ny, self.nx) < 1:
            raise ValidationError(f"layout dimensions must be positive: {self}")

    @classmethod
    def of(cls, inp: ModelInput) -> "FlatLayout":
        return cls(*inp.shape)

    @property
    def sizes(self) -> dict[str, int]:
        return {
            "eta": self.nt * self.ny * self.nx,
            "xs": self.nx,
            "ys": self.ny,
            "ts": self.nt,
            "G": 1,
            "F": 1,
        }

    @property
    def segments(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in self.sizes.items():
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def total_dim(self) -> int:
        return sum(self.sizes.values())

    def index(self, block: str, i: int = 0) -> int:
        seg = self.segments[block]
        if not 0 <= i < seg.stop - seg.start:
            raise ValidationError(f"index {i} out of range for block {block!r}")
        return seg.start + i

    def block_of(self, flat_index: int) -> tuple[str, int]:
        for name, seg in self.segments.items():
            if seg.start <= flat_index < seg.stop:
                return name, flat_index - seg.start
        raise ValidationError(f"flat index {flat_index} outside layout of size {self.total_dim}")

    def transposed(self) -> "FlatLayout":
        return FlatLayout(self.nt, self.nx, self.ny)

    def to_json(self) -> dict:
        return {"nt": self.nt, "ny": self.ny, "nx": self.nx}


def flatten(inp: ModelInput, layout: FlatLayout | None = None) -> np.ndarray:
    layout = layout or FlatLayout.of(inp)
    if inp.shape != (layout.nt, layout.ny, layout.nx):
        raise ValidationError(f"input shape {inp.shape} does not match {layout}")
    return np.concatenate([inp.eta.ravel(), inp.xs, inp.ys, inp.ts, [inp.G, inp.F]])


def unflatten(vec, layout: FlatLayout) -> ModelInput:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (layout.total_dim,):
        raise ValidationError(f"vector of shape {vec.shape} does not fit layout of size {layout.total_dim}")
    seg = layout.segments
    return ModelInput(
        eta=vec[seg["eta"]].reshape(layout.nt, layout.ny, layout.nx),
        xs=vec[seg["xs"]],
        ys=vec[seg["ys"]],
        ts=vec[seg["ts"]],
        G=vec[seg["G"]][0],
        F=vec[seg["F"]][0],
    )


def split_batch(X: np.ndarray, layout: FlatLayout):
    """View a batch of flat vectors ``(n, dim)`` as model arrays, without validation."""
    seg = layout.segments
    return (
        X[:, seg["eta"]].reshape(-1, layout.nt, layout.ny, layout.nx),
        X[:, seg["xs"]],
        X[:, seg["ys"]],
        X[:, seg["ts"]],
        X[:, seg["G"].start],
        X[:, seg["F"].start],
    )


@dataclass(frozen=True, eq=False)
class AffineMR:
    """An affine input mapping plus bookkeeping.

    Dense members hold ``gamma``/``beta``; structured members hold the gather arrays
    ``src``/``scale`` (and ``beta``) along with the catalogue ``kind`` and ``params``
    that produced them.  ``out_layout`` differs from ``layout`` only for
    ``transpose_xy`` on non-square grids.
    """

    layout: FlatLayout
    form: str
    label: str = ""
    provenance: str = "discovered"
    kind: str | None = None
    params: dict = field(default_factory=dict)
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    src: np.ndarray | None = None
    scale: np.ndarray | None = None
    out_layout: FlatLayout | None = None
    description: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.out_layout is None:
            object.__setattr__(self, "out_layout", self.layout)
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        n_in, n_out = self.layout.total_dim, self.out_layout.total_dim
        beta = np.zeros(n_out) if self.beta is None else np.array(self.beta, dtype=np.float64)
        if beta.shape != (n_out,):
            raise ValidationError(f"beta has shape {beta.shape}, expected ({n_out},)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if self.form == "dense":
            gamma = np.array(self.gamma, dtype=np.float64)
            if gamma.shape != (n_out, n_in):
                raise ValidationError(f"gamma has shape {gamma.shape}, expected ({n_out}, {n_in})")
            gamma.setflags(write=False)
            object.__setattr__(self, "gamma", gamma)
        elif self.form == "structured":
            src = np.array(self.src, dtype=np.intp)
            scale = np.array(self.scale, dtype=np.float64)
            if src.shape != (n_out,) or scale.shape != (n_out,):
                raise ValidationError("structured gather arrays do not match the layout")
            if src.size and (src.min() < 0 or src.max() >= n_in):
                raise ValidationError("structured gather indices out of range")
            src.setflags(write=False)
            scale.setflags(write=False)
            object.__setattr__(self, "src", src)
            object.__setattr__(self, "scale", scale)
        else:
            raise ValidationError(f"unknown form {self.form!r}")

    @property
    def is_dense(self) -> bool:
        return self.form == "dense"

    def to_dense(self) -> "AffineMR":
        if self.is_dense:
            return self
        return AffineMR(
            layout=self.layout, form="dense", label=self.label, provenance=self.provenance,
            gamma=self.dense_gamma(), beta=self.beta, out_layout=self.out_layout,
            description=self.description, meta=dict(self.meta),
        )

    def dense_gamma(self) -> np.ndarray:
        if self.is_dense:
            return self.gamma
        gamma = np.zeros((self.out_layout.total_dim, self.layout.total_dim))
        gamma[np.arange(len(self.src)), self.src] = self.scale
        return gamma

    def with_meta(self, **changes) -> "AffineMR":
        return replace(self, **changes)

    def __call__(self, x):
        return apply_mr(self, x)

    def to_json(self) -> dict:
        out = {
            "form": self.form,
            "kind": self.kind,
            "params": self.params,
            "layout": self.layout.to_json(),
        }
        if self.is_dense:
            out["gamma"] = self.gamma.tolist()
            out["out_layout"] = self.out_layout.to_json()
        out["beta"] = self.beta.tolist()
        out["label"] = self.label
        out["provenance"] = self.provenance
        if self.description:
            out["description"] = self.description
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_json(cls, data: dict) -> "AffineMR":
        try:
            layout = FlatLayout(**data["layout"])
            form = data["form"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed MR JSON: {exc}") from None
        if form == "structured":
            mr = _structured_from_json(data, layout)
            beta = data.get("beta")
            if beta is not None and np.any(np.asarray(beta) != mr.beta):
                mr = mr.with_meta(beta=beta)
            return mr
        if form != "dense":
            raise ValidationError(f"unknown form {form!r}")
        out_layout = FlatLayout(**data.get("out_layout", data["layout"]))
        return cls(
            layout=layout, form="dense", kind=data.get("kind"), params=data.get("params") or {},
            gamma=data["gamma"], beta=data["beta"], out_layout=out_layout,
            label=data.get("label", ""), provenance=data.get("provenance", "discovered"),
            description=data.get("description", ""), meta=data.get("meta", {}),
        )


def dense_mr(gamma, beta, layout: FlatLayout, label="", provenance="discovered", **kw) -> AffineMR:
    return AffineMR(layout=layout, form="dense", gamma=gamma, beta=beta, label=label,
                    provenance=provenance, **kw)


def identity_mr(layout: FlatLayout) -> AffineMR:
    n = layout.total_dim
    return AffineMR(
        layout=layout, form="structured", kind="identity", label="identity",
        provenance="identity", src=np.arange(n), scale=np.ones(n),
    )


def apply_mr(g: AffineMR, x) -> np.ndarray:
    """Evaluate ``g`` on one flat vector or on a batch of shape ``(n, dim)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (g.layout.total_dim,):
        raise ValidationError(f"vector length {x.shape[-1:]} does not match layout size {g.layout.total_dim}")
    if g.is_dense:
        return x @ g.gamma.T + g.beta
    return x[..., g.src] * g.scale + g.beta


# --- catalogue -----------------------------------------------------------------

CATALOGUE_KINDS = (
    "identity", "scale_GF", "scale_eta_xy", "transpose_xy",
    "reverse_x", "reverse_y", "cyclic_shift_x", "cyclic_shift_y",
)


def _eta_index(layout: FlatLayout) -> np.ndarray:
    return np.arange(layout.nt * layout.ny * layout.nx).reshape(layout.nt, layout.ny, layout.nx)


def _gather(kind: str, params: dict, layout: FlatLayout):
    """Return ``(src, scale, out_layout)`` for a catalogue kind."""
    n = layout.total_dim
    seg = layout.segments
    src, scale = np.arange(n), np.ones(n)
    out_layout = layout
    eta_idx = _eta_index(layout)

    def nonzero_constant():
        c = float(params.get("c", 2.0))
        if c == 0.0 or not np.isfinite(c):
            raise ValidationError(f"{kind} needs a finite nonzero constant, got {c}")
        return c

    if kind == "identity":
        pass
    elif kind == "scale_GF":
        c = nonzero_constant()
        scale[seg["G"]] = c
        scale[seg["F"]] = c
    elif kind == "scale_eta_xy":
        c = nonzero_constant()
        for block in ("eta", "xs", "ys"):
            scale[seg[block]] = c
    elif kind == "transpose_xy":
        out_layout = layout.transposed()
        oseg = out_layout.segments
        src = np.empty(out_layout.total_dim, dtype=np.intp)
        scale = np.ones(out_layout.total_dim)
        # out eta[t, j, i] = eta[t, i, j]
        src[oseg["eta"]] = eta_idx.transpose(0, 2, 1).ravel()
        src[oseg["xs"]] = np.arange(seg["ys"].start, seg["ys"].stop)
        src[oseg["ys"]] = np.arange(seg["xs"].start, seg["xs"].stop)
        src[oseg["ts"]] = np.arange(seg["ts"].start, seg["ts"].stop)
        src[oseg["G"]] = seg["G"].start
        src[oseg["F"]] = seg["F"].start
    elif kind in ("reverse_x", "reverse_y"):
        axis, block = (2, "xs") if kind == "reverse_x" else (1, "ys")
        src[seg["eta"]] = np.flip(eta_idx, axis=axis).ravel()
        src[seg[block]] = src[seg[block]][::-1]
    elif kind in ("cyclic_shift_x", "cyclic_shift_y"):
        axis = 2 if kind == "cyclic_shift_x" else 1
        length = eta_idx.shape[axis]
        k = int(params.get("k", 1)) % length
        src[seg["eta"]] = np.roll(eta_idx, k, axis=axis).ravel()
    else:
        raise ValidationError(f"unknown catalogue kind {kind!r}")
    return src, scale, out_layout


def catalogue_mr(kind: str, params: dict | None = None, layout: FlatLayout | None = None,
                 label: str | None = None, description: str = "") -> AffineMR:
    if layout is None:
        raise ValidationError("catalogue_mr needs a layout")
    params = dict(params or {})
    if kind in ("cyclic_shift_x", "cyclic_shift_y"):
        length = layout.nx if kind == "cyclic_shift_x" else layout.ny
        params["k"] = int(params.get("k", 1)) % length
    src, scale, out_layout = _gather(kind, params, layout)
    return AffineMR(
        layout=layout, form="structured", kind=kind, params=params,
        label=label or kind, provenance="identity" if kind == "identity" else "catalogue",
        src=src, scale=scale, out_layout=out_layout, description=description,
    )


# The first two entries both keep G/F fixed: one multiplies the constants jointly,
# the other divides them jointly.
MANUAL_CATALOGUE = (
    ("scale_GF", {"c": 3.0}, "scale_GF",
     "multiply G and F by the same constant"),
    ("scale_GF", {"c": 0.25}, "keep_G_over_F",
     "rescale G and F jointly so that the ratio G/F stays constant"),
    ("scale_eta_xy", {"c": 2.0}, "scale_eta_xy", "scale eta, x and y by a constant"),
    ("transpose_xy", {}, "transpose_xy", "transpose x and y"),
    ("reverse_x", {}, "reverse_x", "reverse the direction of x"),
    ("reverse_y", {}, "reverse_y", "reverse the direction of y"),
    ("cyclic_shift_x", {"k": 1}, "cyclic_shift_x", "shift the x coordinates cyclically"),
    ("cyclic_shift_y", {"k": 1}, "cyclic_shift_y", "shift the y coordinates cyclically"),
)


def manual_catalogue(layout: FlatLayout, shift: int = 1) -> list[AffineMR]:
    """The eight manually identified MRs, instantiated on ``layout``."""
    out = []
    for kind, params, label, description in MANUAL_CATALOGUE:
        params = dict(params)
        if "k" in params:
            params["k"] = shift
        out.append(catalogue_mr(kind, params, layout, label=label, description=description))
    return out


def _structured_from_json(data: dict, layout: FlatLayout) -> AffineMR:
    kind = data.get("kind")
    params = data.get("params") or {}
    label = data.get("label") or kind
    if kind == "composite":
        parts = params.get("parts")
        if not parts or len(parts) != 2:
            raise ValidationError("composite MR needs exactly two parts")
        mr = compose(AffineMR.from_json(parts[0]), AffineMR.from_json(parts[1]))
    elif kind == "identity":
        mr = identity_mr(layout)
    else:
        mr = catalogue_mr(kind, params, layout)
    return mr.with_meta(
        label=label,
        provenance=data.get("provenance", mr.provenance),
        description=data.get("description", ""),
        meta=data.get("meta", {}),
    )


# --- distances and composition -------------------------------------------------

def _check_compatible(a: AffineMR, b: AffineMR):
    if a.layout != b.layout or a.out_layout != b.out_layout:
        raise ValidationError(f"incompatible layouts: {a.label!r} vs {b.label!r}")


def mr_distance(a: AffineMR, b: AffineMR, samples) -> float:
    """Mean over ``samples`` of the squared Euclidean distance ``|a(x) - b(x)|**2``."""
    _check_compatible(a, b)
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if X.shape[0] == 0 or np.asarray(samples).size == 0:
        raise ValidationError("mr_distance needs at least one sample")
    diff = apply_mr(a, X) - apply_mr(b, X)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def compose(a: AffineMR, b: AffineMR) -> AffineMR:
    """The mapping ``x -> a(b(x))``."""
    if a.layout != b.out_layout:
        raise ValidationError(f"cannot compose {a.label!r} after {b.label!r}: layout mismatch")
    label = f"{a.label}∘{b.label}"
    provenance = "catalogue" if {a.provenance, b.provenance} <= {"catalogue", "identity"} else "discovered"
    if not a.is_dense and not b.is_dense:
        return AffineMR(
            layout=b.layout, form="structured", kind="composite",
            params={"parts": [a.to_json(), b.to_json()]},
            label=label, provenance=provenance,
            src=b.src[a.src], scale=a.scale * b.scale[a.src],
            beta=a.scale * b.beta[a.src] + a.beta, out_layout=a.out_layout,
        )
    ga, gb = a.dense_gamma(), b.dense_gamma()
    return AffineMR(
        layout=b.layout, form="dense", gamma=ga @ gb, beta=ga @ b.beta + a.beta,
        out_layout=a.out_layout, label=label, provenance=provenance,
    )


# --- MR sets ---------------------------------------------------------------------

@dataclass(eq=False)
class MRSet:
    """Ordered set of known MRs for one function; ``members[0]`` is the identity."""

    members: list
    function_id: str = ""
    traces: list = field(default_factory=list)
    total_steps: int = 0

    def __post_init__(self):
        if not self.members or self.members[0].kind != "identity":
            raise ValidationError("an MR set must start with the identity map")

    @classmethod
    def start(cls, layout: FlatLayout, function_id: str = "") -> "MRSet":
        return cls(members=[identity_mr(layout)], function_id=function_id)

    @property
    def layout(self) -> FlatLayout:
        return self.members[0].layout

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def discovered(self) -> list:
        return [m for m in self.members if m.provenance == "discovered"]

    def add(self, mr: AffineMR) -> None:
        if mr.layout != self.layout:
            raise ValidationError("MR layout does not match the set")
        self.members.append(mr)

    def to_json(self) -> dict:
        return {"function_id": self.function_id, "members": [m.to_json() for m in self.members]}

    @classmethod
    def from_json(cls, data) -> "MRSet":
        if isinstance(data, list):
            data = {"function_id": "", "members": data}
        members = [AffineMR.from_json(m) for m in data["members"]]
        return cls(members=members, function_id=data.get("function_id", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "MRSet":
        return cls.from_json(json.loads(Path(path).read_text()))
