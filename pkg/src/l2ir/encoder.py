"""Frozen text encoders for turning intent reports into fixed vectors.

Two interchangeable implementations: a dependency-free hashing encoder
(deterministic, offline, used by tests and the mock pipeline) and a
remote embedding-endpoint client. Both map text to R^dim and never see
gradients.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from . import hashing

logger = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 256

ENV_EMB_URL = "L2IR_EMB_URL"
ENV_EMB_MODEL = "L2IR_EMB_MODEL"
ENV_LLM_KEY = "L2IR_LLM_KEY"


class EncoderError(RuntimeError):
    """Remote embedding endpoint failed after retries."""


@dataclass
class HashingTextEncoder:
    """L2-normalized hashed term frequencies; the built-in frozen encoder."""

    dim: int = DEFAULT_EMBED_DIM

    @property
    def name(self) -> str:
        return f"hash-{self.dim}"

    def encode(self, text: str) -> np.ndarray:
        return hashing.hashed_tf(text, self.dim)


@dataclass
class RemoteTextEncoder:
    """Embedding-endpoint client speaking ``POST {model, input}``.

    The response must carry an ``embedding`` array whose length fixes
    the encoder dimension; a mismatch against ``dim`` (when set) is an
    error rather than a silent truncation.
    """

    url: str
    model: str
    api_key: str | None = None
    dim: int | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    @property
    def name(self) -> str:
        return f"remote-{self.model}"

    def encode(self, text: str) -> np.ndarray:
        payload = {"model": self.model, "input": text}
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self.session.post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise requests.HTTPError(f"status {resp.status_code}")
                if resp.status_code >= 400:
                    # Client errors are deterministic; retrying cannot help.
                    raise EncoderError(
                        f"embedding endpoint rejected request: "
                        f"status {resp.status_code}"
                    )
                vec = np.asarray(resp.json()["embedding"], dtype=np.float64)
                if self.dim is not None and vec.shape != (self.dim,):
                    raise EncoderError(
                        f"endpoint returned dim {vec.shape}, expected ({self.dim},)"
                    )
                return vec
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    delay = self.backoff * (2.0**attempt)
                    logger.warning(
                        "embedding request failed (%s), retry %d/%d in %.1fs",
                        exc,
                        attempt + 1,
                        self.max_retries - 1,
                        delay,
                    )
                    time.sleep(delay)
        raise EncoderError(f"embedding endpoint failed after {self.max_retries} attempts") from last_error


def remote_encoder_from_env(dim: int | None = None) -> RemoteTextEncoder:
    url = os.environ.get(ENV_EMB_URL)
    model = os.environ.get(ENV_EMB_MODEL)
    if not url or not model:
        raise EncoderError(
            f"remote encoder requires {ENV_EMB_URL} and {ENV_EMB_MODEL} to be set"
        )
    return RemoteTextEncoder(
        url=url, model=model, api_key=os.environ.get(ENV_LLM_KEY), dim=dim
    )


def get_encoder(backend: str = "hash", dim: int = DEFAULT_EMBED_DIM):
    """Encoder factory keyed by backend name (``hash`` or ``remote``)."""
    if backend == "hash":
        return HashingTextEncoder(dim=dim)
    if backend == "remote":
        return remote_encoder_from_env(dim=dim)
    raise ValueError(f"unknown encoder backend: {backend!r}")
