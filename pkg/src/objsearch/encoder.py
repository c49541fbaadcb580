"""The boundary to the text/image embedding models.

Three interchangeable providers produce unit vectors in one shared latent
space per index:

* :class:`ToyEncoder`, a deterministic hash-based encoder for tests and
  demos. Text and synthetic token images share one featurization path, so
  similarities are analytically predictable.
* :class:`RemoteEncoder`, a JSON-over-HTTP client for a real dual-encoder
  model served elsewhere.
* :class:`EmbeddingFileReader`, precomputed embeddings read from a binary
  file.

Model weights, tokenizers, and GPU execution are deliberately out of scope.
"""

from __future__ import annotations

import base64
import re
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Optional, Union

import numpy as np

from .core import DEFAULT_DIM, EmbeddingVector
from .errors import ConfigurationError, CorruptionError, FormatError, InputError, TransportError
from .preprocess import PixelBuffer

# -- descriptor -------------------------------------------------------------

MODALITIES = ("text", "image", "both")


@dataclass(frozen=True)
class EncoderDescriptor:
    encoder_id: str
    dim: int
    modality: str

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigurationError("encoder dim must be positive")
        if self.modality not in MODALITIES:
            raise ConfigurationError(f"modality must be one of {MODALITIES}")


@dataclass(frozen=True)
class SyntheticTokenImage:
    """A token list standing in for visual content in tests and demos."""

    tokens: tuple[str, ...]


# -- deterministic test encoder ---------------------------------------------

_TOKEN_SEED = 0x5EED_501A
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xFF51AFD7ED558CCD)
_MIX2 = np.uint64(0xC4CEB9FE1A85EC53)

_token_re = re.compile(r"[0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics; empty pieces dropped."""
    return _token_re.findall(text.lower())


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    x ^= x >> np.uint64(33)
    x *= _MIX1
    x ^= x >> np.uint64(33)
    x *= _MIX2
    x ^= x >> np.uint64(33)
    return x


def _token_state(token: str) -> np.uint64:
    h = _FNV_OFFSET ^ np.uint64(_TOKEN_SEED)
    for b in token.encode("utf-8"):
        h = (h ^ np.uint64(b)) * _FNV_PRIME
    return _mix64(h.reshape(1) if isinstance(h, np.ndarray) else np.array([h]))[0]


class ToyEncoder:
    """Hash-based dual encoder with a controllable latent space.

    Each token seeds a 64-bit avalanche hash which is expanded through a
    splitmix-style counter stream into ``dim`` values in [-1, 1); token
    vectors are summed and the sum normalized. Identical inputs give
    bitwise-identical vectors, and text encodes exactly like a synthetic
    image carrying the same tokens. Distinct tokens land on near-orthogonal
    directions, which makes retrieval outcomes easy to predict in tests.

    Raster input is accepted too (content is hashed), so plumbing that
    feeds real crops keeps working end to end; those vectors carry no
    visual semantics.
    """

    def __init__(self, dim: int = 512):
        if dim < 1:
            raise ConfigurationError("dim must be positive")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def descriptor(self) -> EncoderDescriptor:
        return EncoderDescriptor(encoder_id=f"toy-{self.dim}", dim=self.dim, modality="both")

    def _token_vector(self, token: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(token)
        if cached is not None:
            return cached
        with np.errstate(over="ignore"):
            state = _token_state(token)
            counters = state + np.arange(1, self.dim + 1, dtype=np.uint64) * _GOLDEN
            z = _mix64(counters)
        u = (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        vec = 2.0 * u - 1.0
        vec.setflags(write=False)
        with self._lock:
            self._cache[token] = vec
        return vec

    def embed_tokens(self, tokens: Iterable[str]) -> EmbeddingVector:
        cleaned: list[str] = []
        for t in tokens:
            cleaned.extend(tokenize(t))
        if not cleaned:
            raise InputError("no usable tokens; a zero vector has no direction")
        total = np.zeros(self.dim, dtype=np.float64)
        for t in cleaned:
            total += self._token_vector(t)
        return EmbeddingVector(total)

    def encode_text(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise InputError("text must be non-empty")
        return self.embed_tokens([text])

    def encode_image(self, image: Union[SyntheticTokenImage, PixelBuffer]) -> EmbeddingVector:
        if isinstance(image, SyntheticTokenImage):
            return self.embed_tokens(image.tokens)
        if isinstance(image, PixelBuffer):
            digest = _content_token(image)
            return self.embed_tokens([digest])
        raise InputError(f"toy encoder cannot embed {type(image).__name__}")


def _content_token(image: PixelBuffer) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(struct.pack("<II", image.width, image.height))
    h.update(image.data)
    return "px" + h.hexdigest()


# -- remote encoder ----------------------------------------------------------

_CANARY_TEXT = "determinism canary 7e41"


class RemoteEncoder:
    """Client for a dual encoder served over HTTP.

    Wire contract: POST {base_url}/encode with
    ``{"modality": "text"|"image", "payload": <string or base64 RGB8 square
    crop>, "dim": d}`` returning ``{"embedding": [d floats]}``. The client
    re-normalizes every response, bounds in-flight requests, and retries
    transient failures with backoff. On first use it sends a canary input
    twice and insists on bitwise-equal replies; a provider that answers
    nondeterministically would silently break ranking reproducibility.
    """

    def __init__(
        self,
        base_url: str,
        dim: int,
        *,
        encoder_id: Optional[str] = None,
        timeout: float = 30.0,
        max_retries: int = 2,
        backoff: float = 0.2,
        max_in_flight: int = 8,
        check_canary: bool = True,
        session=None,
    ):
        import requests

        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._canary_checked = not check_canary
        self._canary_lock = threading.Lock()
        self._encoder_id = encoder_id or f"remote:{self.base_url}"

    @property
    def descriptor(self) -> EncoderDescriptor:
        return EncoderDescriptor(encoder_id=self._encoder_id, dim=self.dim, modality="both")

    def _post(self, modality: str, payload: str) -> list[float]:
        import requests

        body = {"modality": modality, "payload": payload, "dim": self.dim}
        attempts = 0
        last_status: Optional[int] = None
        while True:
            attempts += 1
            try:
                with self._slots:
                    resp = self._session.post(
                        f"{self.base_url}/encode", json=body, timeout=self.timeout
                    )
                last_status = resp.status_code
                if resp.status_code >= 500:
                    raise TransportError(
                        f"encoder returned {resp.status_code}",
                        attempts=attempts,
                        last_status=resp.status_code,
                    )
                if resp.status_code != 200:
                    raise TransportError(
                        f"encoder rejected request: {resp.status_code} {resp.text[:200]}",
                        attempts=attempts,
                        last_status=resp.status_code,
                    )
                doc = resp.json()
                emb = doc.get("embedding")
                if not isinstance(emb, list):
                    raise TransportError(
                        "encoder response missing 'embedding'",
                        attempts=attempts,
                        last_status=resp.status_code,
                    )
                return emb
            except (requests.ConnectionError, requests.Timeout) as exc:
                if attempts > self.max_retries:
                    raise TransportError(
                        f"encoder unreachable after {attempts} attempts: {exc}",
                        attempts=attempts,
                        last_status=last_status,
                    ) from exc
            except TransportError:
                if attempts > self.max_retries or (last_status is not None and last_status < 500):
                    raise
            time.sleep(self.backoff * attempts)

    def _ensure_canary(self) -> None:
        if self._canary_checked:
            return
        with self._canary_lock:
            if self._canary_checked:
                return
            first = self._post("text", _CANARY_TEXT)
            second = self._post("text", _CANARY_TEXT)
            if first != second:
                raise ConfigurationError(
                    "remote encoder is not deterministic: canary input produced "
                    "two different embeddings"
                )
            self._canary_checked = True

    def _to_vector(self, values: list[float]) -> EmbeddingVector:
        if len(values) != self.dim:
            raise ConfigurationError(
                f"encoder returned dim {len(values)}, expected {self.dim}"
            )
        return EmbeddingVector(values)

    def encode_text(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise InputError("text must be non-empty")
        self._ensure_canary()
        return self._to_vector(self._post("text", text))

    def encode_image(self, image: PixelBuffer) -> EmbeddingVector:
        if not isinstance(image, PixelBuffer):
            raise InputError("remote encoder expects an RGB8 pixel buffer")
        if not image.is_square:
            raise InputError(
                f"remote encoder requires square crops, got {image.width}x{image.height}"
            )
        self._ensure_canary()
        payload = base64.b64encode(image.data).decode("ascii")
        return self._to_vector(self._post("image", payload))


# -- precomputed embedding files ---------------------------------------------

_EMB_MAGIC = b"SOLE"
_EMB_VERSION = 1
FULL_IMAGE_KEY = "full"


def object_key(image_id: str, object_index: int) -> str:
    return f"{image_id}/{object_index}"


def full_image_key(image_id: str) -> str:
    return f"{image_id}/{FULL_IMAGE_KEY}"


def write_embedding_file(
    path: str | Path, dim: int, records: Iterable[tuple[str, np.ndarray]]
) -> int:
    """Write a precomputed-embedding file; returns the record count.

    Layout: magic ``SOLE``, u16 version, u32 dim, u64 count, then per
    record a u64-length-prefixed UTF-8 key followed by dim little-endian
    f32 values. Keys are ``image_id/object_index`` for crops and
    ``image_id/full`` for whole images.
    """
    entries = list(records)
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<HIQ", _EMB_VERSION, dim, len(entries)))
        for key, values in entries:
            arr = np.asarray(values, dtype="<f4")
            if arr.shape != (dim,):
                raise InputError(f"record {key!r} has shape {arr.shape}, expected ({dim},)")
            raw = key.encode("utf-8")
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(arr.tobytes())
    return len(entries)


def _read_exact(fh: BinaryIO, n: int, path: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptionError(f"embedding file {path} is truncated", partition=path)
    return buf


class EmbeddingFileReader:
    """Lookup over a precomputed-embedding file, loaded eagerly.

    Values are re-normalized at construction, which also validates them.
    """

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._by_key: dict[str, EmbeddingVector] = {}
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _EMB_MAGIC:
                raise FormatError(f"{self.path}: bad magic {magic!r}, expected {_EMB_MAGIC!r}")
            version, dim, count = struct.unpack("<HIQ", _read_exact(fh, 14, self.path))
            if version != _EMB_VERSION:
                raise FormatError(f"{self.path}: unsupported version {version}")
            self.dim = int(dim)
            for _ in range(count):
                (key_len,) = struct.unpack("<Q", _read_exact(fh, 8, self.path))
                key = _read_exact(fh, key_len, self.path).decode("utf-8")
                values = np.frombuffer(
                    _read_exact(fh, self.dim * 4, self.path), dtype="<f4"
                ).astype(np.float64)
                self._by_key[key] = EmbeddingVector(values)

    @property
    def descriptor(self) -> EncoderDescriptor:
        return EncoderDescriptor(
            encoder_id=f"file:{Path(self.path).name}", dim=self.dim, modality="image"
        )

    def __len__(self) -> int:
        return len(self._by_key)

    def keys(self) -> list[str]:
        return list(self._by_key)

    def get(self, image_id: str, object_index: int) -> Optional[EmbeddingVector]:
        return self._by_key.get(object_key(image_id, object_index))

    def get_full(self, image_id: str) -> Optional[EmbeddingVector]:
        return self._by_key.get(full_image_key(image_id))

    def get_key(self, key: str) -> Optional[EmbeddingVector]:
        return self._by_key.get(key)


def encoder_from_spec(spec: str, *, dim: Optional[int] = None):
    """Build an encoder from its command-line form.

    Accepted forms: ``toy``, ``toy:<dim>``, ``remote:<url>``,
    ``file:<path>``. ``dim`` is the dimension the index expects; a spec
    that states its own dimension must agree with it.
    """
    spec = spec.strip()
    if spec == "toy":
        return ToyEncoder(dim if dim is not None else DEFAULT_DIM)
    if spec.startswith("toy:"):
        try:
            stated = int(spec[4:])
        except ValueError:
            raise ConfigurationError(f"bad toy encoder spec {spec!r}; expected toy:<dim>")
        if dim is not None and stated != dim:
            raise ConfigurationError(
                f"encoder spec asks for dim {stated} but the index uses dim {dim}"
            )
        return ToyEncoder(stated)
    if spec.startswith("remote:"):
        url = spec[len("remote:") :]
        if not url:
            raise ConfigurationError("remote encoder spec is missing its URL")
        if dim is None:
            raise ConfigurationError("remote encoders need the target dimension")
        return RemoteEncoder(url, dim=dim)
    if spec.startswith("file:"):
        path = spec[len("file:") :]
        if not path:
            raise ConfigurationError("file encoder spec is missing its path")
        reader = EmbeddingFileReader(path)
        if dim is not None and reader.dim != dim:
            raise ConfigurationError(
                f"embedding file holds dim {reader.dim} but the index uses dim {dim}"
            )
        return reader
    raise ConfigurationError(
        f"unknown encoder spec {spec!r}; expected toy, toy:<dim>, remote:<url>, or file:<path>"
    )
