"""Tapped-delay neural models: forward/inverse NARX nets, Levenberg-Marquardt
training, local linearization, inverse-dynamics control and gated online
adaptation.

Regressors are laid out as channel groups relative to the decision time t:
("ref", -1) is the desired/observed next output y(t+1) (inverse net only),
("y", l) is the sensor vector l steps back, ("u", l) the voltage vector l
steps back.  The forward net maps [y(t), y(t-1), S(t), S(t-1)] -> y(t+1); the
inverse net maps [y(t+1), y(t), y(t-1), S(t-1), S(t-2)] -> S(t).

Training and the reported MSEs operate in the normalized target space (the
per-channel affine maps are fitted on the training split); this is the loss
the accept/reject and early-stopping logic is stated on.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, WarmupError

MAGIC = b"PZTNARX1"
_KIND_CODES = {"ref": 0, "y": 1, "u": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def forward_layout(feedback_delays=(1, 2), input_delays=(1, 2)):
    """Input layout of the forward model predicting y(t+1)."""
    groups = [("y", d - 1) for d in sorted(feedback_delays)]
    groups += [("u", d - 1) for d in sorted(input_delays)]
    return tuple(groups)


def inverse_layout(feedback_delays=(1, 2), input_delays=(1, 2)):
    """Input layout of the inverse model producing S(t)."""
    groups = [("ref", -1)]
    groups += [("y", d - 1) for d in sorted(feedback_delays)]
    groups += [("u", d) for d in sorted(input_delays)]
    return tuple(groups)


@dataclass
class NarxNet:
    """Single-hidden-layer rectifier network over a tapped-delay regressor."""

    y_dim: int
    u_dim: int
    layout: tuple
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    in_offset: np.ndarray
    in_scale: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        if np.any(self.in_scale == 0.0) or np.any(self.out_scale == 0.0):
            raise ValueError("normalization scales must be nonzero")

    @classmethod
    def initialize(cls, y_dim, u_dim, layout, n_out, hidden=10, seed=0):
        n_in = sum(y_dim if kind in ("ref", "y") else u_dim for kind, _ in layout)
        rng = np.random.default_rng(seed)
        lim1 = 1.0 / np.sqrt(n_in)
        lim2 = 1.0 / np.sqrt(hidden)
        return cls(
            y_dim=y_dim,
            u_dim=u_dim,
            layout=tuple(layout),
            w1=rng.uniform(-lim1, lim1, size=(hidden, n_in)),
            b1=np.zeros(hidden),
            w2=rng.uniform(-lim2, lim2, size=(n_out, hidden)),
            b2=np.zeros(n_out),
            in_offset=np.zeros(n_in),
            in_scale=np.ones(n_in),
            out_offset=np.zeros(n_out),
            out_scale=np.ones(n_out),
        )

    @property
    def n_in(self):
        return self.w1.shape[1]

    @property
    def n_out(self):
        return self.w2.shape[0]

    @property
    def hidden_width(self):
        return self.w1.shape[0]

    @property
    def max_lag(self):
        return max(lag for _, lag in self.layout)

    def group_slices(self):
        """Column slice of each layout group within the regressor."""
        slices = []
        start = 0
        for kind, lag in self.layout:
            dim = self.y_dim if kind in ("ref", "y") else self.u_dim
            slices.append(((kind, lag), slice(start, start + dim)))
            start += dim
        return slices

    def normalize_in(self, x):
        return (x - self.in_offset) / self.in_scale

    def normalize_out(self, y):
        return (y - self.out_offset) / self.out_scale

    def denormalize_out(self, yn):
        return yn * self.out_scale + self.out_offset

    def batch_forward(self, x):
        """Denormalized predictions for regressor rows x (N, n_in)."""
        xn = self.normalize_in(np.atleast_2d(x))
        h = np.maximum(xn @ self.w1.T + self.b1, 0.0)
        return self.denormalize_out(h @ self.w2.T + self.b2)

    def input_jacobian(self, regressor):
        """d(output)/d(regressor) at one point, through the normalizers."""
        xn = self.normalize_in(np.asarray(regressor, dtype=float))
        pre = self.w1 @ xn + self.b1
        mask = (pre > 0.0).astype(float)  # one-sided derivative, 0 at the kink
        core = (self.w2 * mask) @ self.w1
        return (self.out_scale[:, None] * core) / self.in_scale[None, :]

    def parameters(self):
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    def set_parameters(self, theta):
        nh, ni = self.w1.shape
        no = self.w2.shape[0]
        ofs = 0
        self.w1 = theta[ofs : ofs + nh * ni].reshape(nh, ni).copy()
        ofs += nh * ni
        self.b1 = theta[ofs : ofs + nh].copy()
        ofs += nh
        self.w2 = theta[ofs : ofs + no * nh].reshape(no, nh).copy()
        ofs += no * nh
        self.b2 = theta[ofs : ofs + no].copy()


def forward(net, regressor):
    """Network output for one regressor (denormalized)."""
    regressor = np.asarray(regressor, dtype=float)
    if regressor.shape != (net.n_in,):
        raise ValueError(f"regressor shape {regressor.shape}, expected ({net.n_in},)")
    return net.batch_forward(regressor)[0]


def _residual_jacobian(net, xn):
    """Normalized predictions and the residual Jacobian w.r.t. parameters.

    Rows of J follow the (sample, output) raveling of the residual; columns
    follow parameters() order [w1, b1, w2, b2].
    """
    n = xn.shape[0]
    nh, ni = net.w1.shape
    no = net.w2.shape[0]
    pre = xn @ net.w1.T + net.b1
    mask = (pre > 0.0).astype(float)
    h = pre * mask
    pred = h @ net.w2.T + net.b2
    wm = net.w2[None, :, :] * mask[:, None, :]  # (n, no, nh)
    j_w1 = np.einsum("noj,ni->noji", wm, xn).reshape(n, no, nh * ni)
    j_b1 = wm
    j_w2 = np.zeros((n, no, no, nh))
    for o in range(no):
        j_w2[:, o, o, :] = h
    j_w2 = j_w2.reshape(n, no, no * nh)
    j_b2 = np.tile(np.eye(no), (n, 1, 1))
    jac = np.concatenate([j_w1, j_b1, j_w2, j_b2], axis=2)
    return pred, jac.reshape(n * no, -1)


@dataclass
class TrainingDataset:
    """Regressor/target rows plus a disjoint train/validation/test split."""

    inputs: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        n = self.inputs.shape[0]
        all_idx = np.sort(np.concatenate([self.train_idx, self.val_idx, self.test_idx]))
        if len(all_idx) != n or np.any(all_idx != np.arange(n)):
            raise ValueError("split indices must be disjoint and cover every row")


def assemble_regressor(layout, readings, voltages, t, desired=None):
    """Regressor row at decision time t from episode histories.

    `readings` and `voltages` are (T, dim) arrays; a ("ref", -1) group takes
    readings[t+1] unless `desired` overrides it.
    """
    parts = []
    for kind, lag in layout:
        if kind == "ref":
            parts.append(desired if desired is not None else readings[t + 1])
        elif kind == "y":
            parts.append(readings[t - lag])
        else:
            parts.append(voltages[t - lag])
    return np.concatenate(parts)


def build_dataset(episodes, layout, target, split=(0.7, 0.15, 0.15), seed=0):
    """Rows from a list of (readings, voltages) episodes; rows never straddle
    episode boundaries.  `target` is "y_next" (forward model) or "u_now"
    (inverse model).  The split is a seeded random row permutation.
    """
    if target not in ("y_next", "u_now"):
        raise ValueError("target must be 'y_next' or 'u_now'")
    max_lag = max(lag for _, lag in layout)
    needs_next = target == "y_next" or any(kind == "ref" for kind, _ in layout)
    rows_x, rows_t = [], []
    for readings, voltages in episodes:
        readings = np.asarray(readings, dtype=float)
        voltages = np.asarray(voltages, dtype=float)
        t_end = len(readings) - 1 if needs_next else len(readings)
        for t in range(max(max_lag, 0), t_end):
            rows_x.append(assemble_regressor(layout, readings, voltages, t))
            rows_t.append(readings[t + 1] if target == "y_next" else voltages[t])
    if not rows_x:
        raise ValueError("episodes are too short for the delay structure")
    inputs = np.asarray(rows_x)
    targets = np.asarray(rows_t)
    n = len(inputs)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return TrainingDataset(
        inputs=inputs,
        targets=targets,
        train_idx=np.sort(perm[:n_train]),
        val_idx=np.sort(perm[n_train : n_train + n_val]),
        test_idx=np.sort(perm[n_train + n_val :]),
    )


@dataclass
class TrainingReport:
    """Per-epoch record of one Levenberg-Marquardt run."""

    epochs: np.ndarray
    lambdas: np.ndarray
    train_mse: np.ndarray
    val_mse: np.ndarray
    best_epoch: int
    test_mse: float

    def rows(self):
        for i in range(len(self.epochs)):
            yield (int(self.epochs[i]), float(self.lambdas[i]),
                   float(self.train_mse[i]), float(self.val_mse[i]))


def _mse(net, xn, tn):
    pred = np.maximum(xn @ net.w1.T + net.b1, 0.0) @ net.w2.T + net.b2
    return float(np.mean((pred - tn) ** 2))


def fit_normalization(net, dataset):
    """Fit per-channel affine normalizers on the training split."""
    x = dataset.inputs[dataset.train_idx]
    t = dataset.targets[dataset.train_idx]
    net.in_offset = x.mean(axis=0)
    net.in_scale = np.where(x.std(axis=0) > 1e-8, x.std(axis=0), 1.0)
    net.out_offset = t.mean(axis=0)
    net.out_scale = np.where(t.std(axis=0) > 1e-8, t.std(axis=0), 1.0)


def train_lm(net, dataset, max_epochs=200, lam_init=1e-2, lam_factor=10.0,
             patience=10, lam_max=1e12, refit_normalization=True):
    """Full-Jacobian Levenberg-Marquardt with validation early stopping.

    Accepted steps never increase the training MSE (rejected trial steps
    raise lambda and retry).  Stops at max_epochs, after `patience`
    consecutive validation increases, or when lambda escalates past lam_max
    without an acceptable step.  The returned net carries the weights of the
    best validation epoch.
    """
    if len(dataset.train_idx) == 0:
        raise ValueError("empty training split")
    if refit_normalization:
        fit_normalization(net, dataset)
    n_params = len(net.parameters())
    if len(dataset.train_idx) < n_params:
        warnings.warn(
            f"training rows ({len(dataset.train_idx)}) fewer than parameters ({n_params})",
            stacklevel=2,
        )
    xn_train = net.normalize_in(dataset.inputs[dataset.train_idx])
    tn_train = net.normalize_out(dataset.targets[dataset.train_idx])
    xn_val = net.normalize_in(dataset.inputs[dataset.val_idx])
    tn_val = net.normalize_out(dataset.targets[dataset.val_idx])

    lam = float(lam_init)
    theta = net.parameters()
    mse = _mse(net, xn_train, tn_train)
    best_val = np.inf
    best_theta = theta.copy()
    best_epoch = 0
    bad_streak = 0
    hist = {"epoch": [], "lambda": [], "train": [], "val": []}

    for epoch in range(1, max_epochs + 1):
        pred, jac = _residual_jacobian(net, xn_train)
        res = (pred - tn_train).ravel()
        if not np.all(np.isfinite(res)):
            raise DivergenceError("training loss became non-finite")
        jtj = jac.T @ jac
        jtr = jac.T @ res
        n_res = len(res)
        accepted = False
        while lam <= lam_max:
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(n_params), -jtr)
            except np.linalg.LinAlgError as exc:
                raise DivergenceError("singular LM normal equations") from exc
            trial = theta + delta
            net.set_parameters(trial)
            trial_mse = _mse(net, xn_train, tn_train)
            if np.isfinite(trial_mse) and trial_mse < mse:
                theta = trial
                mse = trial_mse
                lam = max(lam / lam_factor, 1e-14)
                accepted = True
                break
            lam *= lam_factor
        if not accepted:
            net.set_parameters(theta)
            break
        val_mse = _mse(net, xn_val, tn_val) if len(dataset.val_idx) else mse
        hist["epoch"].append(epoch)
        hist["lambda"].append(lam)
        hist["train"].append(mse)
        hist["val"].append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_theta = theta.copy()
            best_epoch = epoch
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= patience:
                break

    net.set_parameters(best_theta)
    xn_test = net.normalize_in(dataset.inputs[dataset.test_idx])
    tn_test = net.normalize_out(dataset.targets[dataset.test_idx])
    test_mse = _mse(net, xn_test, tn_test) if len(dataset.test_idx) else np.nan
    report = TrainingReport(
        epochs=np.asarray(hist["epoch"]),
        lambdas=np.asarray(hist["lambda"]),
        train_mse=np.asarray(hist["train"]),
        val_mse=np.asarray(hist["val"]),
        best_epoch=best_epoch,
        test_mse=test_mse,
    )
    return net, report


@dataclass(frozen=True)
class LinearizedNarx:
    """Local affine surrogate y(t+1) ~ offset + A y(t) + B S(t) around a point."""

    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    d_mat: np.ndarray
    offset: np.ndarray
    jacobian: np.ndarray
    regressor0: np.ndarray

    def predict(self, regressor):
        return self.offset + self.jacobian @ (np.asarray(regressor) - self.regressor0)


def linearize(net, operating_regressor):
    """Jacobian blocks of the net at an operating point.

    A is the block of the lag-0 sensor group, B the block of the lag-0 input
    group (zeros if the layout lacks one); C is identity on the predicted
    outputs, D zero.  At a rectifier kink the one-sided (zero) derivative is
    used.
    """
    x0 = np.asarray(operating_regressor, dtype=float)
    jac = net.input_jacobian(x0)
    a_mat = np.zeros((net.n_out, net.y_dim))
    b_mat = np.zeros((net.n_out, net.u_dim))
    for (kind, lag), cols in net.group_slices():
        if kind == "y" and lag == 0:
            a_mat = jac[:, cols].copy()
        elif kind == "u" and lag == 0:
            b_mat = jac[:, cols].copy()
    return LinearizedNarx(
        a_mat=a_mat,
        b_mat=b_mat,
        c_mat=np.eye(net.n_out),
        d_mat=np.zeros((net.n_out, net.u_dim)),
        offset=forward(net, x0),
        jacobian=jac,
        regressor0=x0.copy(),
    )


def inverse_control(net_inv, desired_next, readings_history, voltages_history):
    """Voltages from the inverse model for a desired next reading.

    Histories are sequences ending at the current step (latest last); raises
    WarmupError until they cover the delay taps.
    """
    max_y_lag = max((lag for kind, lag in net_inv.layout if kind == "y"), default=-1)
    max_u_lag = max((lag for kind, lag in net_inv.layout if kind == "u"), default=0)
    if len(readings_history) < max_y_lag + 1 or len(voltages_history) < max_u_lag:
        raise WarmupError("history shorter than the delay taps")
    parts = []
    for kind, lag in net_inv.layout:
        if kind == "ref":
            parts.append(np.asarray(desired_next, dtype=float))
        elif kind == "y":
            parts.append(np.asarray(readings_history[-1 - lag], dtype=float))
        else:
            parts.append(np.asarray(voltages_history[-lag], dtype=float))
    return forward(net_inv, np.concatenate(parts))


@dataclass
class NndAdaptor:
    """Prediction-error gate plus damped gradient refinement of a live net."""

    error_threshold: float
    adaptation_rate: float
    window: int = 1
    accepted: int = 0
    rejected: int = 0
    _buffer: list = field(default_factory=list)

    def prediction_error(self, net, regressor, target):
        """RMS residual of the pair in normalized output units."""
        pred_n = net.normalize_out(forward(net, regressor))
        targ_n = net.normalize_out(np.asarray(target, dtype=float))
        return float(np.sqrt(np.mean((pred_n - targ_n) ** 2)))


def nnd_update(adaptor, net, regressor, target):
    """Gate an incoming pair; on acceptance apply one damped gradient step.

    Returns True when the pair was accepted (weights changed), False when the
    discriminator rejected it (weights untouched, bitwise).
    """
    regressor = np.asarray(regressor, dtype=float)
    target = np.asarray(target, dtype=float)
    if not (np.all(np.isfinite(regressor)) and np.all(np.isfinite(target))):
        adaptor.rejected += 1
        return False
    err = adaptor.prediction_error(net, regressor, target)
    if not err > adaptor.error_threshold:
        adaptor.rejected += 1
        return False
    adaptor._buffer.append((regressor, target))
    if len(adaptor._buffer) > adaptor.window:
        adaptor._buffer.pop(0)
    xn = net.normalize_in(np.vstack([p[0] for p in adaptor._buffer]))
    tn = net.normalize_out(np.vstack([p[1] for p in adaptor._buffer]))
    pred, jac = _residual_jacobian(net, xn)
    res = (pred - tn).ravel()
    grad = jac.T @ res / len(res)
    # damping: the update norm never exceeds the rate, so one wild pair
    # (an unmodeled disturbance sample) cannot destabilize the weights
    norm = float(np.linalg.norm(grad))
    net.set_parameters(
        net.parameters() - adaptor.adaptation_rate * grad / max(1.0, norm)
    )
    adaptor.accepted += 1
    return True


def save_net(net, path):
    """Serialize to the versioned little-endian binary format.

    Layout: magic "PZTNARX1"; u32 y_dim, u_dim, group count; per group u32
    kind code (0 ref / 1 y / 2 u) + i32 lag; u32 hidden, n_out; then float64
    arrays in_offset, in_scale, out_offset, out_scale, w1, b1, w2, b2
    (row-major, little-endian).
    """
    head = bytearray()
    head += MAGIC
    head += struct.pack("<III", net.y_dim, net.u_dim, len(net.layout))
    for kind, lag in net.layout:
        head += struct.pack("<Ii", _KIND_CODES[kind], lag)
    head += struct.pack("<II", net.hidden_width, net.n_out)
    body = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for arr in (net.in_offset, net.in_scale, net.out_offset, net.out_scale,
                    net.w1, net.b1, net.w2, net.b2)
    )
    with open(path, "wb") as fh:
        fh.write(bytes(head) + body)


def load_net(path):
    """Inverse of save_net; validates the magic string."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a {MAGIC.decode()} model file")
    ofs = len(MAGIC)
    y_dim, u_dim, n_groups = struct.unpack_from("<III", blob, ofs)
    ofs += 12
    layout = []
    for _ in range(n_groups):
        code, lag = struct.unpack_from("<Ii", blob, ofs)
        ofs += 8
        layout.append((_KIND_NAMES[code], lag))
    hidden, n_out = struct.unpack_from("<II", blob, ofs)
    ofs += 8
    n_in = sum(y_dim if kind in ("ref", "y") else u_dim for kind, lag in layout)

    def take(count, shape):
        nonlocal ofs
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=ofs).astype(float)
        ofs += 8 * count
        return arr.reshape(shape)

    in_offset = take(n_in, (n_in,))
    in_scale = take(n_in, (n_in,))
    out_offset = take(n_out, (n_out,))
    out_scale = take(n_out, (n_out,))
    w1 = take(hidden * n_in, (hidden, n_in))
    b1 = take(hidden, (hidden,))
    w2 = take(n_out * hidden, (n_out, hidden))
    b2 = take(n_out, (n_out,))
    return NarxNet(
        y_dim=y_dim,
        u_dim=u_dim,
        layout=tuple(layout),
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        in_offset=in_offset,
        in_scale=in_scale,
        out_offset=out_offset,
        out_scale=out_scale,
    )


class NarxController:
    """Inverse-dynamics episode controller with optional NND adaptation.

    The NARX feedback channel is the modal state [W; Wd] (the state-space
    quantity the local affine surrogate describes; the receding-horizon
    controller consumes the same full state).  Desired next output is
    decay * current output, pulling the state toward zero; the trained
    inverse net translates that demand into patch voltages.  When adaptation
    is on, each newly observed transition forms an inverse-dynamics pair
    (observed y(t+1) plus history maps to the voltage actually applied) that
    is offered to the gate.
    """

    def __init__(self, net_inv, voltage_limits, decay=0.7, adaptor=None,
                 adaptation_enabled=False):
        self.net = net_inv
        self.limits = np.asarray(voltage_limits, dtype=float)
        self.decay = float(decay)
        self.adaptor = adaptor
        self.adaptation_enabled = adaptation_enabled
        self.last_diagnostics = None
        self.reset()

    @staticmethod
    def output_of(state):
        """The NARX output channel: the plant state vector."""
        return np.concatenate([state.w, state.wd])

    def reset(self):
        self._readings = []
        self._voltages = []
        self._desired = []
        self._tracking_t = []
        self._tracking_sq = []
        self.clip_events = 0
        if self.adaptor is not None:
            self.adaptor._buffer.clear()

    def tracking_errors(self):
        """(times, squared errors) of desired-vs-achieved readings."""
        return np.asarray(self._tracking_t), np.asarray(self._tracking_sq)

    def _observe_pair(self, z_new):
        # completed transition: target S(t-1), ref = observed y(t) = z_new
        hist_z = self._readings
        hist_v = self._voltages
        max_y_lag = max(lag for kind, lag in self.net.layout if kind == "y")
        max_u_lag = max(lag for kind, lag in self.net.layout if kind == "u")
        if len(hist_z) < max_y_lag + 1 or len(hist_v) < max_u_lag + 1:
            return
        parts = []
        for kind, lag in self.net.layout:
            if kind == "ref":
                parts.append(z_new)
            elif kind == "y":
                parts.append(hist_z[-1 - lag])
            else:
                # lag is relative to the pair's decision time, one step back
                parts.append(hist_v[-1 - lag])
        nnd_update(self.adaptor, self.net, np.concatenate(parts), hist_v[-1])

    def __call__(self, t, reading, state):
        output = self.output_of(state)
        if self._desired and self._desired[-1] is not None:
            err = output - self._desired[-1]
            self._tracking_t.append(t)
            self._tracking_sq.append(float(np.mean(err**2)))
        if self.adaptation_enabled and self.adaptor is not None and self._voltages:
            self._observe_pair(output)
        self._readings.append(output)
        desired = self.decay * output
        try:
            v = inverse_control(self.net, desired, self._readings, self._voltages)
        except WarmupError:
            v = np.zeros(self.net.u_dim)
            desired = None
        self._desired.append(desired)
        clipped = np.clip(v, -self.limits, self.limits)
        if np.any(clipped != v):
            self.clip_events += 1
        self._voltages.append(clipped)
        self.last_diagnostics = None
        return clipped
