"""Two-tier kinematic network: frozen offline blocks plus a 100-parameter online block.

The network maps a standardized window of wheel/IMU channels to a planar twist
(vx, vy, wz). Wiring, fixed by convention and serialized with the model:

    features = relu(offline1 @ window)            # 7*n_w -> 7
    online   = tanh-MLP(features)                 # 7 -> 5 -> 5 -> 5
    hidden   = relu(offline2 @ [features, online])  # 12 -> hidden_dim
    twist    = offline3 @ hidden                  # hidden_dim -> 3

Offline blocks use ReLU, the online block tanh; the two paths merge by
concatenation. Only the online block's 100 weights/biases are exposed as the
flat parameter vector optimized at runtime.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Online block layer shapes (out, in); 7*5+5 + 5*5+5 + 5*5+5 = 100 parameters.
ONLINE_LAYER_SIZES = ((5, 7), (5, 5), (5, 5))
N_ONLINE_PARAMS = 100
# cumulative end index of each layer's (weights + bias) block in the flat vector
ONLINE_LAYER_BOUNDS = (40, 70, 100)

N_CHANNELS = 7  # w_lf, w_lh, w_rh, w_rf, dvx_imu, dvy_imu, wz_imu


@dataclass
class SensorFrame:
    """One time step of wheel speeds and IMU increments, robot frame."""

    t: float
    w_lf: float
    w_lh: float
    w_rh: float
    w_rf: float
    dvx_imu: float
    dvy_imu: float
    wz_imu: float

    def channels(self) -> np.ndarray:
        return np.array([self.w_lf, self.w_lh, self.w_rh, self.w_rf,
                         self.dvx_imu, self.dvy_imu, self.wz_imu])

    def left_right_speeds(self) -> tuple[float, float]:
        """(w_left, w_right) as the mean of the front/hind wheel pair."""
        return 0.5 * (self.w_lf + self.w_lh), 0.5 * (self.w_rf + self.w_rh)


@dataclass
class NetworkModel:
    """Offline blocks, standardization statistics, and per-terrain initial parameters.

    Immutable after load; forward/jacobian are pure functions of (model, P, window).
    """

    n_w: int
    input_mean: np.ndarray  # (7,)
    input_std: np.ndarray   # (7,)
    off1_W: np.ndarray      # (feature_dim, 7*n_w)
    off1_b: np.ndarray
    off2_W: np.ndarray      # (hidden_dim, feature_dim + 5)
    off2_b: np.ndarray
    off3_W: np.ndarray      # (3, hidden_dim)
    off3_b: np.ndarray
    p_init: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.off1_W.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.off2_W.shape[0]

    def validate(self) -> None:
        if self.feature_dim != ONLINE_LAYER_SIZES[0][1]:
            raise ValueError("offline1 output must feed the online block "
                             f"({self.feature_dim} != {ONLINE_LAYER_SIZES[0][1]})")
        if self.off1_W.shape[1] != N_CHANNELS * self.n_w:
            raise ValueError("offline1 input width must be 7*n_w")
        if self.off2_W.shape[1] != self.feature_dim + ONLINE_LAYER_SIZES[-1][0]:
            raise ValueError("offline2 must take the merged feature vector")
        if self.off3_W.shape != (3, self.hidden_dim):
            raise ValueError("offline3 must decode to a 3-vector twist")


def default_model(n_w: int = 3, hidden_dim: int = 16, seed: int = 0) -> NetworkModel:
    """Randomly initialized model (He-scaled), mostly useful for tests and training."""
    rng = np.random.default_rng(seed)

    def he(shape):
        return rng.normal(size=shape) * np.sqrt(2.0 / shape[1])

    feat = ONLINE_LAYER_SIZES[0][1]
    model = NetworkModel(
        n_w=n_w,
        input_mean=np.zeros(N_CHANNELS),
        input_std=np.ones(N_CHANNELS),
        off1_W=he((feat, N_CHANNELS * n_w)),
        off1_b=np.zeros(feat),
        off2_W=he((hidden_dim, feat + ONLINE_LAYER_SIZES[-1][0])),
        off2_b=np.zeros(hidden_dim),
        off3_W=he((3, hidden_dim)),
        off3_b=np.zeros(3),
    )
    model.validate()
    return model


def random_params(seed: int = 0, scale: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(size=N_ONLINE_PARAMS) * scale


def unpack_params(P: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Flat 100-vector -> [(W, b)] per online layer. Layer-major, weights then bias."""
    P = np.asarray(P)
    if P.shape != (N_ONLINE_PARAMS,):
        raise ValueError(f"online parameter vector must have length {N_ONLINE_PARAMS}")
    layers = []
    ofs = 0
    for out_dim, in_dim in ONLINE_LAYER_SIZES:
        W = P[ofs:ofs + out_dim * in_dim].reshape(out_dim, in_dim)
        ofs += out_dim * in_dim
        b = P[ofs:ofs + out_dim]
        ofs += out_dim
        layers.append((W, b))
    return layers


def pack_params(layers) -> np.ndarray:
    parts = []
    for (W, b), (out_dim, in_dim) in zip(layers, ONLINE_LAYER_SIZES):
        if W.shape != (out_dim, in_dim) or b.shape != (out_dim,):
            raise ValueError("online layer shape mismatch")
        parts.append(np.ravel(W))
        parts.append(np.ravel(b))
    return np.concatenate(parts)


def build_input_window(frames, model: NetworkModel) -> np.ndarray:
    """Standardize and concatenate the last n_w sensor frames, newest first.

    Standardization uses the statistics stored in the model; they are never
    recomputed at inference time.
    """
    if len(frames) != model.n_w:
        raise ValueError(f"expected {model.n_w} frames, got {len(frames)}")
    if np.any(model.input_std <= 1e-12):
        raise ValueError("degenerate standardization statistics (std <= 1e-12)")
    ordered = sorted(frames, key=lambda f: f.t, reverse=True)
    rows = [(f.channels() - model.input_mean) / model.input_std for f in ordered]
    return np.concatenate(rows)


def _forward_cache(model: NetworkModel, P: np.ndarray, window: np.ndarray):
    layers = unpack_params(P)
    if window.shape != (N_CHANNELS * model.n_w,):
        raise ValueError("window length must be 7*n_w")
    z1 = model.off1_W @ window + model.off1_b
    f1 = np.maximum(z1, 0.0)
    acts = [f1]
    a = f1
    for W, b in layers:
        a = np.tanh(W @ a + b)
        acts.append(a)
    merged = np.concatenate([f1, a])
    z2 = model.off2_W @ merged + model.off2_b
    h = np.maximum(z2, 0.0)
    twist = model.off3_W @ h + model.off3_b
    return twist, (layers, acts, z2)


def forward(model: NetworkModel, P: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Evaluate the network: standardized window -> twist (vx, vy, wz)."""
    twist, _ = _forward_cache(model, P, window)
    return twist


def jacobian_wrt_params(model: NetworkModel, P: np.ndarray,
                        window: np.ndarray) -> np.ndarray:
    """Analytic 3x100 Jacobian of the twist w.r.t. the online parameters.

    Reverse accumulation through the online block; offline blocks are constants.
    """
    twist, (layers, acts, z2) = _forward_cache(model, P, window)
    feat = model.feature_dim
    # d twist / d merged, through decoder and offline2
    d_hidden = model.off3_W * (z2 > 0.0)          # (3, hidden)
    d_merged = d_hidden @ model.off2_W            # (3, feat + 5)
    grad_a = d_merged[:, feat:]                   # (3, 5) w.r.t. online output

    blocks = []
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        a_out = acts[idx + 1]
        a_in = acts[idx]
        grad_z = grad_a * (1.0 - a_out**2)        # (3, out_dim)
        dW = grad_z[:, :, None] * a_in[None, None, :]   # (3, out, in)
        blocks.append((dW.reshape(3, -1), grad_z))
        grad_a = grad_z @ W
    blocks.reverse()
    J = np.zeros((3, N_ONLINE_PARAMS))
    ofs = 0
    for dW, db in blocks:
        J[:, ofs:ofs + dW.shape[1]] = dW
        ofs += dW.shape[1]
        J[:, ofs:ofs + db.shape[1]] = db
        ofs += db.shape[1]
    return J


def save_model(model: NetworkModel, path) -> None:
    doc = {
        "n_w": model.n_w,
        "input_mean": model.input_mean.tolist(),
        "input_std": model.input_std.tolist(),
        "offline1": {"W": model.off1_W.tolist(), "b": model.off1_b.tolist()},
        "offline2": {"W": model.off2_W.tolist(), "b": model.off2_b.tolist()},
        "offline3": {"W": model.off3_W.tolist(), "b": model.off3_b.tolist()},
        "online_layer_sizes": [list(s) for s in ONLINE_LAYER_SIZES],
        "activations": {"offline": "relu", "online": "tanh", "merge": "concat"},
        "p_init": {k: v.tolist() for k, v in model.p_init.items()},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_model(path) -> NetworkModel:
    """Load a model file; weights are promoted to float64 for the factor-graph path."""
    with open(path) as f:
        doc = json.load(f)
    sizes = [tuple(s) for s in doc["online_layer_sizes"]]
    if tuple(sizes) != ONLINE_LAYER_SIZES:
        raise ValueError(f"unsupported online block layout {sizes}")
    model = NetworkModel(
        n_w=int(doc["n_w"]),
        input_mean=np.array(doc["input_mean"], dtype=float),
        input_std=np.array(doc["input_std"], dtype=float),
        off1_W=np.array(doc["offline1"]["W"], dtype=float),
        off1_b=np.array(doc["offline1"]["b"], dtype=float),
        off2_W=np.array(doc["offline2"]["W"], dtype=float),
        off2_b=np.array(doc["offline2"]["b"], dtype=float),
        off3_W=np.array(doc["offline3"]["W"], dtype=float),
        off3_b=np.array(doc["offline3"]["b"], dtype=float),
        p_init={k: np.array(v, dtype=float) for k, v in doc.get("p_init", {}).items()},
    )
    model.validate()
    return model
