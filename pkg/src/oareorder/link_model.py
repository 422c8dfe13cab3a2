"""Synthetic point-to-point link used as ground truth for Q-factor evaluation.

The link is a booster followed by ``len(spans)`` fiber spans, each terminated
by an amplifier (the last one acting as pre-amplifier). Amplifiers run in
gain-controlled mode without output saturation. Noise is the sum of
amplified spontaneous emission and an incoherent, GN-style nonlinear
interference term accumulated span by span.

All heavy lifting is done by :func:`q_matrix`, which evaluates many amplifier
configurations at once; the single-config functions are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.constants import h as PLANCK

#: Fixed offset between GSNR and the reported 16QAM Q-factor.
Q_OFFSET_16QAM_DB = 3.0

QUANTUM_DB = 0.1


def quantize(values, quantum: float = QUANTUM_DB):
    """Round to the amplifier setting grid (0.1 dB by default)."""
    steps = np.round(np.asarray(values, dtype=float) / quantum)
    # second rounding strips float noise such as 15.700000000000001
    return np.round(steps * quantum, 10)


def is_quantized(value: float, quantum: float = QUANTUM_DB) -> bool:
    steps = value / quantum
    return abs(steps - round(steps)) < 1e-6


def db_to_lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class FiberSpan:
    length_km: float = 80.0
    loss_db_per_km: float = 0.2
    nli_coeff: float = 1000.0  # W^-2, P_nli = nli_coeff * P^3

    def __post_init__(self):
        if not self.length_km > 0:
            raise ValueError(f"length_km must be > 0, got {self.length_km}")
        if not self.loss_db_per_km > 0:
            raise ValueError(f"loss_db_per_km must be > 0, got {self.loss_db_per_km}")
        if self.nli_coeff < 0:
            raise ValueError(f"nli_coeff must be >= 0, got {self.nli_coeff}")

    @property
    def loss_db(self) -> float:
        return self.length_km * self.loss_db_per_km


def _as_bounds(bounds, n: int, name: str) -> tuple[tuple[float, float], ...]:
    arr = np.asarray(bounds, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (n, 1))
    if arr.shape != (n, 2):
        raise ValueError(f"{name} must be a [min, max] pair or one pair per amplifier ({n})")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"{name} has an empty interval (min > max)")
    return tuple((float(lo), float(hi)) for lo, hi in arr)


@dataclass(frozen=True)
class LinkSpec:
    """Booster -> (span -> amplifier) x len(spans).

    ``input_loss_db`` is the terminal/multiplexer insertion loss between the
    transmitters and the booster input, so that ``launch_power_dbm`` of the
    channel plan refers to the transmitter side.
    """

    spans: tuple[FiberSpan, ...] = field(default_factory=lambda: tuple(FiberSpan() for _ in range(6)))
    nf_db: float = 5.0
    center_freq_thz: float = 193.4
    gain_bounds_db: tuple = (14.5, 17.5)
    tilt_bounds_db: tuple = (-1.0, 1.0)
    input_loss_db: float = 16.0

    def __post_init__(self):
        spans = tuple(self.spans)
        if not spans:
            raise ValueError("spans must be a nonempty list")
        object.__setattr__(self, "spans", spans)
        n = len(spans) + 1
        object.__setattr__(self, "gain_bounds_db", _as_bounds(self.gain_bounds_db, n, "gain_bounds_db"))
        object.__setattr__(self, "tilt_bounds_db", _as_bounds(self.tilt_bounds_db, n, "tilt_bounds_db"))

    @property
    def n_oa(self) -> int:
        return len(self.spans) + 1

    @property
    def oa_roles(self) -> tuple[str, ...]:
        return ("booster",) + ("inline",) * (len(self.spans) - 1) + ("preamp",)

    @property
    def span_loss_db(self) -> np.ndarray:
        return np.array([s.loss_db for s in self.spans])

    @property
    def nli_coeffs(self) -> np.ndarray:
        return np.array([s.nli_coeff for s in self.spans])

    def bounds_matrix(self) -> np.ndarray:
        """(2*n_oa, 2) array of [min, max] in feature layout [gains..., tilts...]."""
        return np.array(self.gain_bounds_db + self.tilt_bounds_db)


@dataclass(frozen=True)
class ChannelPlan:
    n_batches: int = 6
    channels_per_batch: int = 7
    spacing_ghz: float = 75.0
    symbol_rate_gbaud: float = 63.9
    launch_power_dbm: float = 0.0
    loaded_batches: frozenset = frozenset(range(6))
    existing_batches: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "loaded_batches", frozenset(int(b) for b in self.loaded_batches))
        object.__setattr__(self, "existing_batches", frozenset(int(b) for b in self.existing_batches))
        if self.n_batches < 1 or self.channels_per_batch < 1:
            raise ValueError("n_batches and channels_per_batch must be >= 1")
        if not self.loaded_batches:
            raise ValueError("loaded_batches must be nonempty")
        bad = [b for b in self.loaded_batches if not 0 <= b < self.n_batches]
        if bad:
            raise ValueError(f"loaded_batches out of range: {sorted(bad)}")
        if not self.existing_batches <= self.loaded_batches:
            raise ValueError("existing_batches must be a subset of loaded_batches")

    @property
    def n_slots(self) -> int:
        return self.n_batches * self.channels_per_batch

    @property
    def central_offset(self) -> int:
        return self.channels_per_batch // 2

    @property
    def loaded(self) -> list[int]:
        return sorted(self.loaded_batches)

    def with_loading(self, loaded: Iterable[int], existing: Iterable[int] = ()) -> "ChannelPlan":
        return replace(self, loaded_batches=frozenset(loaded), existing_batches=frozenset(existing))


@dataclass(frozen=True)
class OAConfig:
    gains_db: tuple[float, ...]
    tilts_db: tuple[float, ...]

    def __post_init__(self):
        g = tuple(float(v) for v in self.gains_db)
        t = tuple(float(v) for v in self.tilts_db)
        if len(g) != len(t):
            raise ValueError("gains_db and tilts_db must have the same length")
        object.__setattr__(self, "gains_db", g)
        object.__setattr__(self, "tilts_db", t)

    @property
    def n_oa(self) -> int:
        return len(self.gains_db)

    def vector(self) -> np.ndarray:
        return np.array(self.gains_db + self.tilts_db)

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "OAConfig":
        v = np.asarray(v, dtype=float)
        n = v.size // 2
        return cls(tuple(v[:n]), tuple(v[n:]))

    @classmethod
    def uniform(cls, n_oa: int, gain_db: float, tilt_db: float = 0.0) -> "OAConfig":
        return cls((gain_db,) * n_oa, (tilt_db,) * n_oa)

    def check(self, link: LinkSpec) -> None:
        """Raise ValueError unless the config is on the 0.1 dB grid and within bounds."""
        if self.n_oa != link.n_oa:
            raise ValueError(f"config has {self.n_oa} amplifiers, link has {link.n_oa}")
        for kind, values, bounds in (("gain", self.gains_db, link.gain_bounds_db),
                                     ("tilt", self.tilts_db, link.tilt_bounds_db)):
            for i, (v, (lo, hi)) in enumerate(zip(values, bounds)):
                if not lo - 1e-9 <= v <= hi + 1e-9:
                    raise ValueError(f"{kind} of OA {i} = {v} dB outside [{lo}, {hi}]")
                if not is_quantized(v):
                    raise ValueError(f"{kind} of OA {i} = {v} dB is not a multiple of 0.1 dB")


@dataclass(frozen=True)
class QVector:
    """Per-batch Q-factor in dB; NaN for batches that are not loaded."""

    q_db: np.ndarray

    def __getitem__(self, batch: int) -> float:
        return float(self.q_db[batch])

    def loaded(self) -> dict[int, float]:
        return {int(b): float(v) for b, v in enumerate(self.q_db) if np.isfinite(v)}

    def min_over(self, batches: Iterable[int]) -> float:
        return float(min(self.q_db[b] for b in batches))


def channel_grid(plan: ChannelPlan, center_freq_thz: float = 193.4) -> list[tuple[int, int, float]]:
    """(batch, channel index within batch, frequency THz) for every loaded channel."""
    freqs = _slot_freqs_thz(plan, center_freq_thz)
    cpb = plan.channels_per_batch
    return [(b, k, float(freqs[b * cpb + k])) for b in plan.loaded for k in range(cpb)]


def _slot_freqs_thz(plan: ChannelPlan, center_freq_thz: float) -> np.ndarray:
    idx = np.arange(plan.n_slots)
    return center_freq_thz + (idx - (plan.n_slots - 1) / 2) * plan.spacing_ghz * 1e-3


def band_edges_thz(plan: ChannelPlan, center_freq_thz: float = 193.4) -> tuple[float, float]:
    """Tilt reference band: the full channel grid, loaded or not."""
    f = _slot_freqs_thz(plan, center_freq_thz)
    return float(f[0]), float(f[-1])


def per_channel_gain(config: OAConfig, oa_index: int, freq: float, band: tuple[float, float]) -> float:
    """Gain of one amplifier at ``freq`` (THz); tilt is the half excursion at the band edge."""
    f_min, f_max = band
    if not f_min < f_max:
        raise ValueError("band must satisfy f_min < f_max")
    if not f_min - 1e-12 <= freq <= f_max + 1e-12:
        raise ValueError(f"frequency {freq} THz outside band [{f_min}, {f_max}]")
    f_mid = (f_min + f_max) / 2
    return config.gains_db[oa_index] + config.tilts_db[oa_index] * (freq - f_mid) / (f_max - f_mid)


class _Layout:
    """Frequency-dependent constants of a (link, plan) pair, computed once."""

    def __init__(self, link: LinkSpec, plan: ChannelPlan):
        self.link = link
        self.plan = plan
        cpb = plan.channels_per_batch
        slots = np.concatenate([np.arange(b * cpb, (b + 1) * cpb) for b in plan.loaded])
        all_freqs = _slot_freqs_thz(plan, link.center_freq_thz)
        f_min, f_max = all_freqs[0], all_freqs[-1]
        f_mid = (f_min + f_max) / 2
        self.slots = slots
        self.freq_hz = all_freqs[slots] * 1e12
        self.x = (all_freqs[slots] - f_mid) / (f_max - f_mid) if f_max > f_min else np.zeros(slots.size)
        self.central = np.array([i * cpb + plan.central_offset for i in range(len(plan.loaded))])
        # Cross-channel weights of the incoherent NLI sum, normalized over the
        # whole grid so that full uniform loading gives exactly eta * P^3.
        sep = np.abs(np.arange(plan.n_slots)[:, None] - np.arange(plan.n_slots)[None, :])
        w = 1.0 / (1.0 + sep)
        w /= w.sum(axis=1, keepdims=True)
        self.xci = w[np.ix_(slots, slots)]
        self.ase_unit = db_to_lin(link.nf_db) * PLANCK * self.freq_hz * plan.symbol_rate_gbaud * 1e9


def _powers_dbm(lay: _Layout, gains: np.ndarray, tilts: np.ndarray):
    """Per-channel gain (n, n_oa, C) and amplifier output power (n, n_oa, C) in dBm."""
    link, plan = lay.link, lay.plan
    g_ch = gains[:, :, None] + tilts[:, :, None] * lay.x[None, None, :]
    loss_before = np.concatenate([[0.0], np.cumsum(link.span_loss_db)])
    p_in0 = plan.launch_power_dbm - link.input_loss_db
    p_out = p_in0 + np.cumsum(g_ch, axis=1) - loss_before[None, :, None]
    return g_ch, p_out


def _noise_w(lay: _Layout, g_ch: np.ndarray, p_out: np.ndarray):
    """ASE and NLI power at the receiver, both (n, C) in W."""
    p_rx = p_out[:, -1, :]
    ase_inj = lay.ase_unit[None, None, :] * np.clip(db_to_lin(g_ch) - 1.0, 0.0, None)
    ase = np.sum(ase_inj * db_to_lin(p_rx[:, None, :] - p_out), axis=1)

    n_spans = len(lay.link.spans)
    p_span_in = p_out[:, :n_spans, :]
    p_w = db_to_lin(p_span_in) * 1e-3
    # explicit accumulation instead of a BLAS product keeps each row's result
    # independent of how many configs are evaluated together
    p2 = p_w ** 2
    cross = np.zeros_like(p_w)
    for j in range(p2.shape[-1]):
        cross += p2[:, :, j:j + 1] * lay.xci[:, j]
    nli_gen = lay.link.nli_coeffs[None, :, None] * p_w * cross
    nli = np.sum(nli_gen * db_to_lin(p_rx[:, None, :] - p_span_in), axis=1)
    return ase, nli


def q_matrix(link: LinkSpec, plan: ChannelPlan, vectors: np.ndarray, _layout: _Layout | None = None) -> np.ndarray:
    """Q-factor (dB) of every batch for many configs.

    ``vectors`` is (n, 2*n_oa) in layout [gains..., tilts...]. Returns
    (n, n_batches) with NaN in the columns of unloaded batches.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    lay = _layout or _Layout(link, plan)
    n_oa = link.n_oa
    g_ch, p_out = _powers_dbm(lay, vectors[:, :n_oa], vectors[:, n_oa:])
    ase, nli = _noise_w(lay, g_ch, p_out)
    p_rx_w = db_to_lin(p_out[:, -1, :]) * 1e-3
    with np.errstate(divide="ignore"):
        q = lin_to_db(p_rx_w / (ase + nli)) - Q_OFFSET_16QAM_DB
    out = np.full((vectors.shape[0], plan.n_batches), np.nan)
    out[:, plan.loaded] = q[:, lay.central]
    return out


def propagate(link: LinkSpec, plan: ChannelPlan, config: OAConfig) -> np.ndarray:
    """Signal power (dBm) per loaded channel at each stage boundary.

    Rows: booster output, then (span output, amplifier output) per span,
    giving ``1 + 2*len(spans)`` rows. Columns follow :func:`channel_grid`.
    """
    lay = _Layout(link, plan)
    _, p_out = _powers_dbm(lay, np.atleast_2d(config.gains_db), np.atleast_2d(config.tilts_db))
    p_out = p_out[0]
    rows = [p_out[0]]
    for s, loss in enumerate(link.span_loss_db):
        rows.append(p_out[s] - loss)
        rows.append(p_out[s + 1])
    return np.array(rows)


def accumulate_ase(link: LinkSpec, plan: ChannelPlan, config: OAConfig) -> np.ndarray:
    """ASE power (W) per loaded channel at the receiver."""
    lay = _Layout(link, plan)
    g_ch, p_out = _powers_dbm(lay, np.atleast_2d(config.gains_db), np.atleast_2d(config.tilts_db))
    return _noise_w(lay, g_ch, p_out)[0][0]


def estimate_nli(link: LinkSpec, plan: ChannelPlan, config: OAConfig) -> np.ndarray:
    """Nonlinear interference power (W) per loaded channel at the receiver."""
    lay = _Layout(link, plan)
    g_ch, p_out = _powers_dbm(lay, np.atleast_2d(config.gains_db), np.atleast_2d(config.tilts_db))
    return _noise_w(lay, g_ch, p_out)[1][0]


def single_amp_ase_w(nf_db: float, gain_db: float, freq_hz: float, bandwidth_hz: float) -> float:
    """Closed-form ASE injected by one amplifier into one channel."""
    return float(db_to_lin(nf_db) * PLANCK * freq_hz * max(db_to_lin(gain_db) - 1.0, 0.0) * bandwidth_hz)


def evaluate_q(link: LinkSpec, plan: ChannelPlan, config: OAConfig) -> QVector:
    return QVector(q_matrix(link, plan, config.vector())[0])


class Oracle:
    """The link as a reusable Q model; evaluates batches of configs."""

    def __init__(self, link: LinkSpec, plan: ChannelPlan):
        self.link = link
        self.plan = plan
        self._layout = _Layout(link, plan)

    def q_many(self, vectors: np.ndarray) -> np.ndarray:
        return q_matrix(self.link, self.plan, vectors, self._layout)

    def __call__(self, config: OAConfig) -> QVector:
        return QVector(self.q_many(config.vector())[0])
