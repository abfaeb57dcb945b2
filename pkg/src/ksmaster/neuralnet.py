"""Structured value network with hand-written backpropagation, Adam, and checkpoints.

Layout of one network (all hidden maps are affine followed by softplus):

    masses(M) --feature--> F (d0) --feature_embed--> (80)  -+
    r         --rate_embed----------------------->   (20)  -+-> trunk -> head -> value
    x         --capital_embed-------------------->  (150)  -+

With ``d0 = 0`` the feature branch is absent and the value depends on the
measure only through the interest rate.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._io import dumps, sha256_bytes

MAGIC = b"KSMNET\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetSpec:
    d: int
    d0: int = 1
    feature_embed_dim: int = 80
    rate_embed_dim: int = 20
    capital_embed_dim: int = 150
    trunk_dims: tuple = (300, 150, 50, 20)

    def __post_init__(self):
        object.__setattr__(self, "trunk_dims", tuple(int(t) for t in self.trunk_dims))
        if self.d < 1 or self.d0 < 0:
            raise ValueError("need d >= 1 and d0 >= 0")
        dims = (self.feature_embed_dim, self.rate_embed_dim, self.capital_embed_dim) + self.trunk_dims
        if not self.trunk_dims or min(dims) < 1:
            raise ValueError("all layer widths must be >= 1 and the trunk non-empty")

    @property
    def concat_dim(self) -> int:
        fe = self.feature_embed_dim if self.d0 > 0 else 0
        return fe + self.rate_embed_dim + self.capital_embed_dim

    def to_dict(self) -> dict:
        out = asdict(self)
        out["trunk_dims"] = list(self.trunk_dims)
        return out


@dataclass
class Scaling:
    """Fixed input/output normalization, stored with the parameters.

    Inputs enter as x * x_scale, M * slot_scale (per-slot masses times d) and
    (r - r_shift) / r_scale; the value is v_shift + v_scale * head output.
    """

    slot_scale: np.ndarray
    x_scale: float = 1.0 / 30.0
    r_shift: float = 0.0
    r_scale: float = 0.1
    v_shift: float = 0.0
    v_scale: float = 1.0

    @classmethod
    def for_grid(cls, grid, x_hi: float | None = None, **kw) -> "Scaling":
        x_hi = grid.x_hi if x_hi is None else x_hi
        return cls(slot_scale=np.asarray(grid.slot_widths) * grid.d, x_scale=1.0 / max(abs(x_hi), 1e-12), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slot_scale"] = np.asarray(self.slot_scale, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scaling":
        d = dict(d)
        d["slot_scale"] = np.asarray(d["slot_scale"], dtype=float)
        return cls(**d)


def _softplus(z, need_grad: bool = True):
    e = np.exp(-np.abs(z))
    a = np.maximum(z, 0.0) + np.log1p(e)
    if not need_grad:
        return a, None
    s = 1.0 / (1.0 + e)
    s = np.where(z >= 0, s, e * s)
    return a, s


def param_shapes(spec: NetSpec):
    shapes = []
    if spec.d0 > 0:
        shapes += [("feature.W", (spec.d, spec.d0)), ("feature.b", (spec.d0,))]
        shapes += [("feature_embed.W", (spec.d0, spec.feature_embed_dim)), ("feature_embed.b", (spec.feature_embed_dim,))]
    shapes += [("rate_embed.W", (1, spec.rate_embed_dim)), ("rate_embed.b", (spec.rate_embed_dim,))]
    shapes += [("capital_embed.W", (1, spec.capital_embed_dim)), ("capital_embed.b", (spec.capital_embed_dim,))]
    width = spec.concat_dim
    for k, t in enumerate(spec.trunk_dims):
        shapes += [(f"trunk.{k}.W", (width, t)), (f"trunk.{k}.b", (t,))]
        width = t
    shapes += [("head.W", (width, 1)), ("head.b", (1,))]
    return shapes


@dataclass
class ValueNetwork:
    spec: NetSpec
    scaling: Scaling
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, spec: NetSpec, scaling: Scaling, rng) -> "ValueNetwork":
        """LeCun-normal weights, zero biases."""
        params = {}
        for name, shape in param_shapes(spec):
            if name.endswith(".W"):
                params[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
            else:
                params[name] = np.zeros(shape)
        return cls(spec, scaling, params)

    @classmethod
    def zeros(cls, spec: NetSpec, scaling: Scaling) -> "ValueNetwork":
        return cls(spec, scaling, {n: np.zeros(s) for n, s in param_shapes(spec)})

    def copy(self) -> "ValueNetwork":
        return ValueNetwork(self.spec, Scaling(**{**asdict(self.scaling), "slot_scale": np.array(self.scaling.slot_scale)}),
                            {k: v.copy() for k, v in self.params.items()})

    @property
    def names(self):
        return [n for n, _ in param_shapes(self.spec)]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.names])

    def set_flat(self, theta) -> None:
        k = 0
        for n, shape in param_shapes(self.spec):
            size = int(np.prod(shape))
            self.params[n] = np.array(theta[k : k + size]).reshape(shape)
            k += size

    # forward pieces ---------------------------------------------------------

    def features(self, M) -> np.ndarray:
        """Adaptive features F(M), shape (n, d0)."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.spec.d:
            raise ValueError(f"dimension mismatch: network expects d={self.spec.d}, got {M.shape[1]}")
        if self.spec.d0 == 0:
            return np.zeros((M.shape[0], 0))
        z = (M * self.scaling.slot_scale) @ self.params["feature.W"] + self.params["feature.b"]
        return _softplus(z, need_grad=False)[0]

    def _run(self, x, r, M=None, F=None, need_grad=True):
        P, sc = self.params, self.scaling
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = np.broadcast_to(np.asarray(r, dtype=float), x.shape)
        c = {"x": x}
        parts = []
        if F is None:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            if M.shape[1] != self.spec.d:
                raise ValueError(f"dimension mismatch: network expects d={self.spec.d}, got {M.shape[1]}")
        if self.spec.d0 > 0:
            if F is None:
                c["m"] = np.broadcast_to(M * sc.slot_scale, (x.size, self.spec.d))
                F, c["sF"] = _softplus(c["m"] @ P["feature.W"] + P["feature.b"], need_grad)
            F = np.broadcast_to(np.atleast_2d(F), (x.size, self.spec.d0))
            c["F"] = F
            fe, c["sfe"] = _softplus(F @ P["feature_embed.W"] + P["feature_embed.b"], need_grad)
            parts.append(fe)
        c["rt"] = (r - sc.r_shift) / sc.r_scale
        re, c["sre"] = _softplus(c["rt"][:, None] * P["rate_embed.W"] + P["rate_embed.b"], need_grad)
        c["xt"] = x * sc.x_scale
        ce, c["sce"] = _softplus(c["xt"][:, None] * P["capital_embed.W"] + P["capital_embed.b"], need_grad)
        parts += [re, ce]
        h = np.concatenate(parts, axis=1)
        hs, ss = [h], []
        for k in range(len(self.spec.trunk_dims)):
            h, s = _softplus(h @ P[f"trunk.{k}.W"] + P[f"trunk.{k}.b"], need_grad)
            hs.append(h)
            ss.append(s)
        c["hs"], c["ss"] = hs, ss
        out = (h @ P["head.W"])[:, 0] + P["head.b"][0]
        return sc.v_shift + sc.v_scale * out, c

    def forward(self, x, M, r):
        """Value at states ``x`` (n,) with measures ``M`` (n, d) or (d,) and rates ``r``."""
        return self._run(x, r, M=M, need_grad=False)[0]

    def forward_features(self, x, F, r):
        """Value with the adaptive features given directly (used for figure exports)."""
        return self._run(x, r, F=F, need_grad=False)[0]

    def _trunk_backward(self, c, g_out, want_params: bool):
        """Backpropagate d(value) = g_out through head and trunk; returns grads and d/d(concat)."""
        P = self.params
        grads = {}
        g_out = g_out * self.scaling.v_scale
        hs, ss = c["hs"], c["ss"]
        if want_params:
            grads["head.W"] = hs[-1].T @ g_out[:, None]
            grads["head.b"] = np.array([g_out.sum()])
        g = g_out[:, None] * P["head.W"][:, 0][None, :]
        for k in reversed(range(len(self.spec.trunk_dims))):
            gz = g * ss[k]
            if want_params:
                grads[f"trunk.{k}.W"] = hs[k].T @ gz
                grads[f"trunk.{k}.b"] = gz.sum(axis=0)
            g = gz @ P[f"trunk.{k}.W"].T
        return grads, g

    def _split(self, g):
        spec = self.spec
        k = spec.feature_embed_dim if spec.d0 > 0 else 0
        return g[:, :k], g[:, k : k + spec.rate_embed_dim], g[:, k + spec.rate_embed_dim :]

    def grad_x(self, x, M, r):
        """(value, d value / d x) by reverse mode."""
        v, c = self._run(x, r, M=M)
        _, g = self._trunk_backward(c, np.ones_like(v), want_params=False)
        g_ce = self._split(g)[2]
        dxt = (g_ce * c["sce"]) @ self.params["capital_embed.W"][0]
        return v, dxt * self.scaling.x_scale

    def grad_x_features(self, x, F, r):
        v, c = self._run(x, r, F=F)
        _, g = self._trunk_backward(c, np.ones_like(v), want_params=False)
        dxt = (self._split(g)[2] * c["sce"]) @ self.params["capital_embed.W"][0]
        return v, dxt * self.scaling.x_scale

    def grad_x_shared(self, xs, M, r):
        """Values and x-derivatives on a point set shared by every measure.

        ``xs`` (P,), ``M`` (n, d), ``r`` (n,) -> two (n, P) arrays. The measure and
        rate branches are evaluated once per row and the capital branch once per
        point, which is what makes transporting many measures affordable.
        """
        P, sc, spec = self.params, self.scaling, self.spec
        xs = np.asarray(xs, dtype=float)
        M = np.atleast_2d(np.asarray(M, dtype=float))
        r = np.broadcast_to(np.asarray(r, dtype=float), (M.shape[0],))
        n, npts = M.shape[0], xs.size
        W1, b1 = P["trunk.0.W"], P["trunk.0.b"]
        fe_dim = spec.feature_embed_dim if spec.d0 > 0 else 0
        row = b1
        if spec.d0 > 0:
            F = self.features(M)
            fe = _softplus(F @ P["feature_embed.W"] + P["feature_embed.b"], False)[0]
            row = row + fe @ W1[:fe_dim]
        re = _softplus(((r - sc.r_shift) / sc.r_scale)[:, None] * P["rate_embed.W"] + P["rate_embed.b"], False)[0]
        row = row + re @ W1[fe_dim : fe_dim + spec.rate_embed_dim]
        ce, sce = _softplus((xs * sc.x_scale)[:, None] * P["capital_embed.W"] + P["capital_embed.b"])
        Wc = W1[fe_dim + spec.rate_embed_dim :]
        col = ce @ Wc
        J = ((sce * P["capital_embed.W"][0]) @ Wc) * sc.x_scale  # d z1 / d x, (P, t0)
        z = (row[:, None, :] + col[None, :, :]).reshape(n * npts, -1)
        h, s = _softplus(z)
        hs, ss = [h], [s]
        for k in range(1, len(spec.trunk_dims)):
            h, s = _softplus(h @ P[f"trunk.{k}.W"] + P[f"trunk.{k}.b"])
            hs.append(h)
            ss.append(s)
        v = sc.v_shift + sc.v_scale * ((h @ P["head.W"])[:, 0] + P["head.b"][0])
        g = np.broadcast_to(sc.v_scale * P["head.W"][:, 0], h.shape)
        for k in reversed(range(1, len(spec.trunk_dims))):
            g = (g * ss[k]) @ P[f"trunk.{k}.W"].T
        gz1 = (g * ss[0]).reshape(n, npts, -1)
        dvdx = np.einsum("npk,pk->np", gz1, J)
        return v.reshape(n, npts), dvdx

    def loss_and_grads(self, x, M, r, target, weights=None):
        """Mean squared error against ``target`` and its exact parameter gradients."""
        v, c = self._run(x, r, M=M)
        n = v.size
        diff = v - target
        if weights is None:
            loss = float(np.mean(diff**2))
            g_out = 2.0 * diff / n
        else:
            loss = float(np.sum(weights * diff**2) / n)
            g_out = 2.0 * weights * diff / n
        grads, g = self._trunk_backward(c, g_out, want_params=True)
        P = self.params
        g_fe, g_re, g_ce = self._split(g)
        gz = g_ce * c["sce"]
        grads["capital_embed.W"] = (c["xt"] @ gz)[None, :]
        grads["capital_embed.b"] = gz.sum(axis=0)
        gz = g_re * c["sre"]
        grads["rate_embed.W"] = (c["rt"] @ gz)[None, :]
        grads["rate_embed.b"] = gz.sum(axis=0)
        if self.spec.d0 > 0:
            gz = g_fe * c["sfe"]
            grads["feature_embed.W"] = c["F"].T @ gz
            grads["feature_embed.b"] = gz.sum(axis=0)
            gF = (gz @ P["feature_embed.W"].T) * c["sF"]
            grads["feature.W"] = c["m"].T @ gF
            grads["feature.b"] = gF.sum(axis=0)
        return loss, grads


# optimizer -------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState | None, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction. Returns new (params, state); inputs untouched."""
    if state is None:
        state = AdamState({k: np.zeros_like(g) for k, g in grads.items()}, {k: np.zeros_like(g) for k, g in grads.items()})
    t = state.t + 1
    new_p, new_m, new_v = dict(params), {}, {}
    for k, g in grads.items():
        m = beta1 * state.m[k] + (1 - beta1) * g
        v = beta2 * state.v[k] + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        new_p[k] = params[k] - lr * mhat / (np.sqrt(vhat) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"     # "adam" or "lbfgs"
    steps: int = 2000           # Adam steps, or L-BFGS iterations
    batch_size: int = 256
    lr: float = 1e-3
    lr_final: float | None = None  # geometric decay to this rate over the run

    def __post_init__(self):
        if self.optimizer not in ("adam", "lbfgs"):
            raise ValueError("optimizer must be 'adam' or 'lbfgs'")
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid training settings")


def fit(net: ValueNetwork, x, M, r, target, cfg: TrainConfig, rng) -> list:
    """Regress ``net`` onto ``target`` in place; returns the loss trace."""
    x, M, r, target = (np.asarray(a, dtype=float) for a in (x, M, r, target))
    n = x.size
    trace = []
    if cfg.optimizer == "lbfgs":
        def fun(theta):
            net.set_flat(theta)
            loss, grads = net.loss_and_grads(x, M, r, target)
            return loss, np.concatenate([grads[k].ravel() for k in net.names])

        res = minimize(fun, net.get_flat(), jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.steps, "maxcor": 30, "ftol": 0.0, "gtol": 1e-12})
        net.set_flat(res.x)
        trace.append(float(res.fun))
        return trace
    state = None
    decay = 1.0 if not cfg.lr_final else (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.steps - 1, 1))
    lr = cfg.lr
    bs = min(cfg.batch_size, n)
    perm, pos = rng.permutation(n), 0
    for _ in range(cfg.steps):
        if pos + bs > n:
            perm, pos = rng.permutation(n), 0
        b = perm[pos : pos + bs]
        pos += bs
        loss, grads = net.loss_and_grads(x[b], M[b], r[b], target[b])
        net.params, state = adam_step(net.params, grads, state, lr=lr)
        trace.append(loss)
        lr *= decay
    return trace


# checkpoints -------------------------------------------------------------------


def param_bytes(net: ValueNetwork) -> bytes:
    return b"".join(np.ascontiguousarray(net.params[n], dtype="<f8").tobytes() for n in net.names)


def param_hash(net: ValueNetwork) -> str:
    return sha256_bytes(param_bytes(net))


def save(net: ValueNetwork, path, config_hash: str = "") -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "spec": net.spec.to_dict(),
        "scaling": net.scaling.to_dict(),
        "params": [[n, list(s)] for n, s in param_shapes(net.spec)],
        "param_hash": param_hash(net),
        "config_hash": config_hash,
    }
    hb = dumps(header).encode()
    blob = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hb)) + hb + param_bytes(net)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load(path, expect_spec: NetSpec | None = None) -> ValueNetwork:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a value-network checkpoint")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", blob, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<IQ")
    header = json.loads(blob[off : off + hlen].decode())
    off += hlen
    spec = NetSpec(**header["spec"])
    if expect_spec is not None and spec != expect_spec:
        raise CheckpointError(f"spec mismatch: checkpoint has {spec}, expected {expect_spec}")
    params = {}
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        params[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).astype(float)
        off += 8 * size
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    net = ValueNetwork(spec, Scaling.from_dict(header["scaling"]), params)
    if param_hash(net) != header["param_hash"]:
        raise CheckpointError("parameter hash mismatch")
    return net
