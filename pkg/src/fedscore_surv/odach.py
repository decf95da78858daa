"""One-shot distributed Cox regression across heterogeneous sites (ODACH).

Three broadcast phases, no server:

1. every site fits its local Cox model and broadcasts ``LocalFitMessage``;
2. every site forms the same inverse-variance average ``beta_bar`` and
   broadcasts its likelihood gradient and Hessian there (``DerivativeMessage``);
3. every site maximises its surrogate likelihood and broadcasts the result
   (``SurrogateFitMessage``).

The final estimate is the inverse-variance average of the surrogate fits.
Messages carry a site id, the sample size and one p-vector plus one p x p
matrix; nothing else can pass the bus.
"""
from __future__ import annotations

import json
import struct
import threading
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import cox
from .errors import PrivacyViolation, ProtocolAbort, SingularCovarianceError
from .survival import SurvivalDataset

MAGIC = b"ODCH"
VERSION = 1
LOCAL_FIT, DERIVATIVE, SURROGATE_FIT = 1, 2, 3
_HEADER = struct.Struct("<4sBBIIQ")
_LEN = struct.Struct("<I")


def _vec(a, p=None):
    a = np.array(a, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


def _mat(a):
    a = np.array(a, dtype=float)
    if a.ndim == 1 and a.size == 1:
        a = a.reshape(1, 1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class _Message:
    site_id: int
    n_j: int
    vector: np.ndarray
    matrix: np.ndarray

    msg_type = 0

    def __post_init__(self):
        object.__setattr__(self, "site_id", int(self.site_id))
        object.__setattr__(self, "n_j", int(self.n_j))
        object.__setattr__(self, "vector", _vec(self.vector))
        object.__setattr__(self, "matrix", _mat(self.matrix))

    @property
    def p(self) -> int:
        return self.vector.size

    def __eq__(self, other):
        return (type(self) is type(other) and self.site_id == other.site_id
                and self.n_j == other.n_j and np.array_equal(self.vector, other.vector)
                and np.array_equal(self.matrix, other.matrix))


class LocalFitMessage(_Message):
    """Phase 1: local estimate and its sampling covariance (inverse information / n_j)."""

    msg_type = LOCAL_FIT

    @property
    def beta_hat(self):
        return self.vector

    @property
    def covariance(self):
        return self.matrix


class DerivativeMessage(_Message):
    """Phase 2: gradient and Hessian of the 1/n_j-scaled likelihood at beta_bar."""

    msg_type = DERIVATIVE

    @property
    def grad_at_bar(self):
        return self.vector

    @property
    def hess_at_bar(self):
        return self.matrix


class SurrogateFitMessage(_Message):
    """Phase 3: surrogate maximiser and its covariance (inverse surrogate information / n_j)."""

    msg_type = SURROGATE_FIT

    @property
    def beta_tilde(self):
        return self.vector

    @property
    def covariance_tilde(self):
        return self.matrix


MESSAGE_TYPES = {c.msg_type: c for c in (LocalFitMessage, DerivativeMessage, SurrogateFitMessage)}


def validate_message(msg, p: int | None = None) -> None:
    """Reject anything that is not one of the three fixed-size summary messages."""
    if type(msg) not in MESSAGE_TYPES.values():
        raise PrivacyViolation(f"{type(msg).__name__} is not a permitted protocol message")
    if set(vars(msg)) != {"site_id", "n_j", "vector", "matrix"}:
        raise PrivacyViolation("message carries fields outside the permitted payload")
    k = msg.vector.size
    if msg.vector.shape != (k,) or msg.matrix.shape != (k, k):
        raise PrivacyViolation(
            f"payload must be one p-vector and one p x p matrix, got {msg.vector.shape} "
            f"and {msg.matrix.shape}")
    if p is not None and k != p:
        raise PrivacyViolation(f"payload dimension {k} differs from the design dimension {p}")
    if msg.n_j < 1 or msg.site_id < 0:
        raise PrivacyViolation("invalid site id or sample size")
    if not (np.all(np.isfinite(msg.vector)) and np.all(np.isfinite(msg.matrix))):
        raise PrivacyViolation("non-finite payload")
    if msg.msg_type == DERIVATIVE and not np.allclose(msg.matrix, msg.matrix.T, rtol=0, atol=1e-12):
        raise PrivacyViolation("Hessian payload is not symmetric")


def encode_message(msg) -> bytes:
    """Canonical little-endian binary form."""
    validate_message(msg)
    head = _HEADER.pack(MAGIC, VERSION, msg.msg_type, msg.site_id, msg.p, msg.n_j)
    body = np.concatenate([msg.vector, msg.matrix.reshape(-1)]).astype("<f8").tobytes()
    return head + body


def decode_message(buf: bytes):
    magic, version, mtype, site_id, p, n_j = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC or version != VERSION or mtype not in MESSAGE_TYPES:
        raise ValueError("not an ODACH message")
    expected = _HEADER.size + 8 * (p + p * p)
    if len(buf) != expected:
        raise ValueError(f"message is {len(buf)} bytes, expected {expected}")
    vals = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size)
    return MESSAGE_TYPES[mtype](site_id, n_j, vals[:p], vals[p:].reshape(p, p))


def encode_transcript(messages) -> bytes:
    parts = []
    for m in messages:
        b = encode_message(m)
        parts.append(_LEN.pack(len(b)) + b)
    return b"".join(parts)


def decode_transcript(buf: bytes) -> list:
    out, pos = [], 0
    while pos < len(buf):
        (k,) = _LEN.unpack_from(buf, pos)
        pos += _LEN.size
        out.append(decode_message(buf[pos:pos + k]))
        pos += k
    return out


def message_to_json(msg) -> dict:
    return {"type": type(msg).__name__, "site_id": msg.site_id, "n_j": msg.n_j, "p": msg.p,
            "vector": msg.vector.tolist(), "matrix": msg.matrix.tolist()}


def transcript_to_json(messages) -> str:
    return json.dumps([message_to_json(m) for m in messages], indent=1) + "\n"


class MessageBus:
    """Barrier-synchronised broadcast channel with a transcript recorder.

    Messages are validated before they are recorded; delivery of a phase is
    refused until every expected site has posted, and each phase is
    returned ordered by site id.
    """

    def __init__(self, site_ids: Sequence[int], p: int):
        self.site_ids = tuple(sorted(site_ids))
        self.p = p
        self._lock = threading.Lock()
        self._phases: dict[int, dict[int, object]] = {}
        self._log: list = []

    def broadcast(self, phase: int, msg) -> None:
        validate_message(msg, self.p)
        if msg.site_id not in self.site_ids:
            raise PrivacyViolation(f"unknown site {msg.site_id}")
        with self._lock:
            if phase > 1 and not self._complete(phase - 1):
                raise RuntimeError(f"phase {phase} message before phase {phase - 1} completed")
            slot = self._phases.setdefault(phase, {})
            if msg.site_id in slot:
                raise RuntimeError(f"site {msg.site_id} already posted in phase {phase}")
            slot[msg.site_id] = msg
            self._log.append((phase, msg))

    def _complete(self, phase: int) -> bool:
        return set(self._phases.get(phase, {})) == set(self.site_ids)

    def collect(self, phase: int) -> list:
        with self._lock:
            if not self._complete(phase):
                raise RuntimeError(f"phase {phase} incomplete")
            slot = self._phases[phase]
            return [slot[s] for s in self.site_ids]

    @property
    def transcript(self) -> list:
        """Messages in canonical (phase, site id) order."""
        with self._lock:
            return [m for _, m in sorted(self._log, key=lambda t: (t[0], t[1].site_id))]


def _inv(A, site_id):
    try:
        return cox.spd_inverse(A)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(site_id) from None


def inverse_variance_combine(fits: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Meta-analytic combination ``(sum V_j^-1)^-1 sum V_j^-1 beta_j``.

    ``fits`` holds objects with ``beta``/``covariance`` (or message
    ``vector``/``matrix``) in ascending site order.  Returns the combined
    estimate and ``(sum V_j^-1)^-1``.
    """
    items = []
    for k, f in enumerate(fits):
        if isinstance(f, _Message):
            items.append((f.site_id, f.vector, f.matrix))
        elif isinstance(f, dict):
            items.append((f.get("site_id", k), np.asarray(f["beta"], float),
                          np.atleast_2d(np.asarray(f["covariance"], float))))
        else:
            items.append((getattr(f, "site_id", k), np.asarray(f.beta, float),
                          np.atleast_2d(np.asarray(f.covariance, float))))
    if not items:
        raise ValueError("nothing to combine")
    if len(items) == 1:
        _, b, V = items[0]
        _inv(V, items[0][0])
        return np.array(b, dtype=float), np.array(V, dtype=float)
    p = items[0][1].size
    precision = np.zeros((p, p))
    weighted = np.zeros(p)
    for sid, b, V in items:
        W = _inv(V, sid)
        precision += W
        weighted += W @ b
    cov = _inv(precision, "combined")
    return cov @ weighted, cov


def global_derivatives(msgs: Sequence[DerivativeMessage]) -> tuple[np.ndarray, np.ndarray]:
    """Sample-size weighted averages of the sites' scaled gradients and Hessians."""
    if not msgs:
        raise ValueError("no derivative messages")
    p = msgs[0].p
    for m in msgs:
        if m.p != p:
            raise ValueError("derivative messages disagree on p")
    N = sum(m.n_j for m in msgs)
    if N <= 0:
        raise ValueError("total sample size must be positive")
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    for m in msgs:
        w = m.n_j / N
        grad = grad + w * m.grad_at_bar
        hess = hess + w * m.hess_at_bar
    return grad, hess


class Surrogate:
    """Site j's surrogate log likelihood around ``beta_bar``.

    ``L_j(b) + <g - g_j, b> + 0.5 (b - beta_bar)' (H - H_j) (b - beta_bar)``
    with ``g, H`` global and ``g_j, H_j`` local derivatives at ``beta_bar``.
    """

    def __init__(self, data: SurvivalDataset, beta_bar, global_grad, global_hess,
                 local_grad=None, local_hess=None):
        self._s = cox._Sorted(data)
        self.beta_bar = np.asarray(beta_bar, dtype=float)
        if local_grad is None or local_hess is None:
            _, local_grad, local_hess = self._local(self.beta_bar)
        self.dg = np.asarray(global_grad, float) - np.asarray(local_grad, float)
        self.dH = np.asarray(global_hess, float) - np.asarray(local_hess, float)

    def _local(self, b):
        f, g, h = cox._terms(self._s, b)
        n = self._s.n
        return f / n, g / n, h / n

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        f, g, h = self._local(b)
        r = b - self.beta_bar
        Hr = self.dH @ r
        return (f + self.dg @ b + 0.5 * r @ Hr, g + self.dg + Hr, h + self.dH)

    def value(self, b) -> float:
        return self(b)[0]


def surrogate_log_likelihood(local_data, beta, beta_bar, global_grad, global_hess) -> float:
    return Surrogate(local_data, beta_bar, global_grad, global_hess).value(beta)


def fit_surrogate(local_data: SurvivalDataset, beta_bar, global_grad, global_hess,
                  local_grad=None, local_hess=None,
                  site_id: int | None = None) -> SurrogateFitMessage:
    """Newton-Raphson on the surrogate, started at ``beta_bar``.

    The reported covariance is the inverse of minus the surrogate Hessian
    divided by the local sample size, so that the inverse-variance sum over
    sites recovers the information of the pooled likelihood.
    """
    sur = Surrogate(local_data, beta_bar, global_grad, global_hess, local_grad, local_hess)
    beta, _, _, H, _ = cox.newton_maximize(sur, sur.beta_bar, span_X=sur._s.X)
    cov = cox._covariance(H)
    sid = local_data.site_id if site_id is None else site_id
    return SurrogateFitMessage(sid, local_data.n, beta, cov / local_data.n)


class OdachSite:
    """A participant: private data plus the three phase computations."""

    def __init__(self, data: SurvivalDataset, site_id: int | None = None):
        self.site_id = data.site_id if site_id is None else int(site_id)
        self._data = data
        self._local_grad = None
        self._local_hess = None
        self._beta_bar = None

    @property
    def n(self) -> int:
        return self._data.n

    @property
    def p(self) -> int:
        return self._data.p

    def phase1(self) -> LocalFitMessage:
        fit = cox.fit_cox(self._data)
        return LocalFitMessage(self.site_id, self.n, fit.beta_hat, fit.covariance / self.n)

    def phase2(self, local_fits: Sequence[LocalFitMessage]) -> DerivativeMessage:
        self._beta_bar, _ = inverse_variance_combine(local_fits)
        _, g, h = cox.value_grad_hess(self._data, self._beta_bar)
        self._local_grad, self._local_hess = g, h
        return DerivativeMessage(self.site_id, self.n, g, h)

    def phase3(self, derivatives: Sequence[DerivativeMessage]) -> SurrogateFitMessage:
        g, H = global_derivatives(derivatives)
        return fit_surrogate(self._data, self._beta_bar, g, H, self._local_grad,
                             self._local_hess, site_id=self.site_id)


@dataclass(eq=False)
class FederatedFit:
    beta_bar: np.ndarray
    beta_final: np.ndarray
    covariance_final: np.ndarray
    per_site: list
    transcript: list = field(default_factory=list)

    def transcript_bytes(self) -> bytes:
        return encode_transcript(self.transcript)


def run_odach(sites: Sequence, executor: Executor | None = None) -> FederatedFit:
    """Run the three-phase protocol over ``sites`` (datasets or ``OdachSite``)."""
    actors = [s if isinstance(s, OdachSite) else OdachSite(s) for s in sites]
    if not actors:
        raise ValueError("need at least one site")
    actors.sort(key=lambda a: a.site_id)
    ids = [a.site_id for a in actors]
    if len(set(ids)) != len(ids):
        raise ValueError("site ids must be unique")
    p = actors[0].p
    if any(a.p != p for a in actors):
        raise ValueError("sites disagree on the design dimension")
    bus = MessageBus(ids, p)
    mapper = executor.map if executor is not None else map

    def run_phase(phase, fn):
        def work(actor):
            try:
                return actor, fn(actor), None
            except Exception as exc:  # noqa: BLE001 - re-raised as ProtocolAbort below
                return actor, None, exc
        for actor, msg, exc in mapper(work, actors):
            if exc is not None:
                raise ProtocolAbort(actor.site_id, phase, exc, bus.transcript) from exc
            bus.broadcast(phase, msg)
        return bus.collect(phase)

    local_fits = run_phase(1, lambda a: a.phase1())
    derivs = run_phase(2, lambda a: a.phase2(local_fits))
    surrogates = run_phase(3, lambda a: a.phase3(derivs))
    beta_bar = actors[0]._beta_bar
    beta, cov = inverse_variance_combine(surrogates)
    return FederatedFit(np.array(beta_bar), beta, cov, surrogates, bus.transcript)
