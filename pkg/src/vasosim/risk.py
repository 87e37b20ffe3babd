"""Episode likelihood, time-to-episode, providers, and alert dispatch.

A likelihood provider answers Pr(V = 1 | t = i, biophysics data) for
horizon step i >= 0. Two providers ship here: a deterministic logistic
reference, and a remote client speaking the JSON wire protocol

    request:  {"template_version": str, "horizon_step": int,
               "step_seconds": float, "features": {...}}
    response: {"probability": number, "recommendation": str (optional)}
"""
from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import (
    CurveError,
    DispatchError,
    DomainError,
    NumericalError,
    ProtocolError,
    ProviderError,
    ProviderTimeoutError,
    TransportError,
)

__all__ = [
    "BiophysicsReport",
    "EpisodeLikelihood",
    "TTEResult",
    "AlertPolicy",
    "AlertPayload",
    "classify_now",
    "likelihood_curve",
    "compute_tte",
    "logistic_provider",
    "LlmProvider",
    "dispatch_alert",
    "FileSink",
    "WebhookSink",
]


@dataclass(frozen=True)
class BiophysicsReport:
    """Feature bundle handed to likelihood providers."""

    stenosis_index: float
    density_fractional_change: float
    tof: float
    timestamp: float
    session_id: str
    residual_norm: float = 0.0
    converged: bool = True

    def __post_init__(self):
        if not 0 <= self.stenosis_index <= 1:
            raise DomainError("stenosis_index must lie in [0, 1]")
        if self.timestamp < 0:
            raise DomainError("timestamp must be nonnegative")

    def features(self):
        return {
            "stenosis_index": self.stenosis_index,
            "density_fractional_change": self.density_fractional_change,
            "tof_s": self.tof,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class EpisodeLikelihood:
    probs: np.ndarray       # probs[i-1] = Pr(V=1 | t=i) for i = 1..H
    prob_now: float
    horizon: int

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if self.horizon < 1 or probs.size != self.horizon:
            raise DomainError("probs length must equal horizon >= 1")
        if np.any(probs < 0) or np.any(probs > 1):
            raise DomainError("probabilities must lie in [0, 1]")
        if not 0 <= self.prob_now <= 1:
            raise DomainError("prob_now must lie in [0, 1]")


@dataclass(frozen=True)
class TTEResult:
    """Argmax step of the likelihood curve; ties break to the smallest index."""

    tte_step: int
    max_prob: float
    step_seconds: float
    tie_rule: str = "smallest-index"

    def to_dict(self):
        return {"tte_step": self.tte_step, "max_prob": self.max_prob,
                "step_seconds": self.step_seconds, "tie_rule": self.tie_rule,
                "tte_seconds": self.tte_step * self.step_seconds}


@dataclass(frozen=True)
class AlertPolicy:
    critical_prob: float = 0.8
    critical_horizon: int = 2   # steps
    warn_prob: float = 0.5

    def __post_init__(self):
        for name in ("critical_prob", "warn_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise DomainError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class AlertPayload:
    session_id: str
    timestamp: float
    tte_step: int
    max_prob: float
    prob_now: float
    recommendation: str
    severity: str

    def to_dict(self):
        return {
            "session_id": self.session_id,
            "timestamp": self.timestamp,
            "tte_step": self.tte_step,
            "max_prob": self.max_prob,
            "prob_now": self.prob_now,
            "recommendation": self.recommendation,
            "severity": self.severity,
        }

    @property
    def idempotency_key(self):
        return (self.session_id, self.timestamp)


def _validate_probability(value, source):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ProtocolError(f"{source} returned non-numeric probability {value!r}")
    p = float(value)
    if not math.isfinite(p):
        raise ProtocolError(f"{source} returned non-finite probability")
    if p < -0.01 or p > 1.01:
        raise ProtocolError(f"{source} returned probability {p} outside [-0.01, 1.01]")
    return min(max(p, 0.0), 1.0)


def classify_now(report: BiophysicsReport, provider):
    """Pr(V = 1 | t = 0, data) from the given provider."""
    try:
        value = provider(report, 0)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"provider failed: {exc}") from exc
    return _validate_probability(value, "provider")


def likelihood_curve(report: BiophysicsReport, provider, horizon):
    """Query the provider for every step 0..H and assemble the curve."""
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    values = []
    for i in range(horizon + 1):
        try:
            values.append(_validate_probability(provider(report, i), "provider"))
        except (ProviderError, ProtocolError) as exc:
            raise CurveError(f"provider failed at step {i}: {exc}", step=i) from exc
    return EpisodeLikelihood(probs=np.array(values[1:]), prob_now=values[0],
                             horizon=horizon)


def compute_tte(likelihood: EpisodeLikelihood, step_seconds):
    """Smallest future step maximizing episode probability."""
    probs = likelihood.probs
    if probs.size == 0:
        raise DomainError("empty probability vector")
    k = int(np.argmax(probs))  # np.argmax already returns the first maximum
    return TTEResult(tte_step=k + 1, max_prob=float(probs[k]),
                     step_seconds=float(step_seconds))


def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def logistic_provider(weights, bias, horizon_decay=0.0):
    """Reference provider sigma(w . f + b) with feature vector
    f = [stenosis_index, density_fractional_change, exp(-decay * i)]."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (3,) or not np.all(np.isfinite(weights)):
        raise DomainError("weights must be 3 finite values")
    if not (math.isfinite(bias) and math.isfinite(horizon_decay)):
        raise DomainError("bias and horizon_decay must be finite")

    def provider(report: BiophysicsReport, step: int):
        f = np.array([report.stenosis_index,
                      report.density_fractional_change,
                      math.exp(-horizon_decay * step)])
        z = float(weights @ f) + bias
        out = _sigmoid(z)
        if not math.isfinite(out):
            raise NumericalError("logistic provider produced non-finite output")
        return out

    return provider


class LlmProvider:
    """Remote likelihood provider speaking the JSON wire protocol.

    Retries transient transport failures with exponential backoff; a
    semaphore caps concurrent in-flight requests. The optional
    ``recommendation`` from the last successful response is kept on
    ``last_recommendation``.
    """

    def __init__(self, endpoint, timeout=5.0, template_version="v1",
                 step_seconds=3600.0, max_retries=2, backoff=0.1,
                 max_in_flight=4, session=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.template_version = template_version
        self.step_seconds = step_seconds
        self.max_retries = max_retries
        self.backoff = backoff
        self._semaphore = threading.Semaphore(max_in_flight)
        self._http = session or requests.Session()
        self.last_recommendation = None

    def __call__(self, report: BiophysicsReport, step: int):
        body = {
            "template_version": self.template_version,
            "horizon_step": int(step),
            "step_seconds": self.step_seconds,
            "features": report.features(),
        }
        last_exc = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._semaphore:
                    resp = self._http.post(self.endpoint, json=body,
                                           timeout=self.timeout)
            except requests.Timeout as exc:
                last_exc = ProviderTimeoutError(
                    f"no answer from {self.endpoint} within {self.timeout}s")
                last_exc.__cause__ = exc
            except requests.RequestException as exc:
                last_exc = TransportError(f"transport failure: {exc}")
                last_exc.__cause__ = exc
            else:
                if not 200 <= resp.status_code < 300:
                    raise TransportError(
                        f"{self.endpoint} answered status {resp.status_code}")
                try:
                    payload = resp.json()
                except ValueError as exc:
                    raise ProtocolError("response is not valid JSON") from exc
                if not isinstance(payload, dict) or "probability" not in payload:
                    raise ProtocolError("response lacks a 'probability' field")
                p = _validate_probability(payload["probability"], self.endpoint)
                rec = payload.get("recommendation")
                if rec is not None and not isinstance(rec, str):
                    raise ProtocolError("'recommendation' must be a string")
                self.last_recommendation = rec
                return p
            if attempt < self.max_retries:
                time.sleep(self.backoff * 2**attempt)
        raise last_exc


def llm_provider(endpoint, timeout=5.0, template_version="v1", **kwargs):
    """Factory mirroring :func:`logistic_provider` for the remote client."""
    return LlmProvider(endpoint, timeout=timeout,
                       template_version=template_version, **kwargs)


# ---------------------------------------------------------------------------
# alert sinks

class FileSink:
    """JSON-lines append sink; duplicate idempotency keys are dropped."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._seen = set()
        if os.path.exists(path):
            with open(path) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._seen.add((rec["session_id"], rec["timestamp"]))

    def write(self, payload: AlertPayload):
        with self._lock:
            if payload.idempotency_key in self._seen:
                return
            try:
                with open(self.path, "a") as fh:
                    fh.write(json.dumps(payload.to_dict(), sort_keys=True) + "\n")
            except OSError as exc:
                raise DispatchError(f"file sink write failed: {exc}") from exc
            self._seen.add(payload.idempotency_key)


class WebhookSink:
    """POSTs each payload once; duplicate idempotency keys are dropped."""

    def __init__(self, url, timeout=5.0, session=None):
        self.url = url
        self.timeout = timeout
        self._http = session or requests.Session()
        self._lock = threading.Lock()
        self._seen = set()

    def write(self, payload: AlertPayload):
        with self._lock:
            if payload.idempotency_key in self._seen:
                return
            try:
                resp = self._http.post(self.url, json=payload.to_dict(),
                                       timeout=self.timeout)
            except requests.RequestException as exc:
                raise DispatchError(f"webhook post failed: {exc}") from exc
            if not 200 <= resp.status_code < 300:
                raise DispatchError(f"webhook answered status {resp.status_code}")
            self._seen.add(payload.idempotency_key)


_RECOMMENDATIONS = {
    "critical": "Contact the emergency hotline now; do not wait for symptoms "
                "to worsen.",
    "warn": "Hydrate, rest, and re-measure within the next interval; escalate "
            "if readings worsen.",
    "info": "No action needed; continue routine monitoring.",
}


def dispatch_alert(tte: TTEResult, prob_now, policy: AlertPolicy, sink,
                   session_id, timestamp, recommendation=None):
    """Build the alert payload, classify severity per policy, write to sink.

    The payload is returned even when the sink write fails (the failure is
    re-raised as DispatchError after attaching the payload).
    """
    if prob_now >= policy.critical_prob or tte.tte_step <= policy.critical_horizon:
        severity = "critical"
    elif prob_now >= policy.warn_prob:
        severity = "warn"
    else:
        severity = "info"
    payload = AlertPayload(
        session_id=session_id,
        timestamp=timestamp,
        tte_step=tte.tte_step,
        max_prob=tte.max_prob,
        prob_now=prob_now,
        recommendation=recommendation or _RECOMMENDATIONS[severity],
        severity=severity,
    )
    if sink is not None:
        try:
            sink.write(payload)
        except DispatchError as exc:
            exc.payload = payload
            raise
    return payload
