"""Rate-limited metadata harvesting with checkpointed resume.

Two endpoints with separate sliding-window budgets: a tile endpoint serving
GPS sequences (50,000 requests per day) and a graph endpoint serving image
metadata per sequence (60,000 per minute). Both budgets and endpoints are
configurable; the clock is injectable so tests never wait on wall time.
Checkpoint writes are atomic (temp file then rename), so an interrupted run
resumes to the same final state as an uninterrupted one.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .geo import TileId

TOKEN_ENV_VAR = "MAPILLARY_TOKEN"

TILE_BUDGET = (50_000, 86_400.0)  # requests per rolling day
GRAPH_BUDGET = (60_000, 60.0)  # requests per rolling minute

IMAGE_FIELDS = (
    "id",
    "sequence",
    "thumb_original_url",
    "computed_geometry",
    "height",
    "width",
    "computed_altitude",
    "make",
    "model",
    "creator",
    "is_pano",
    "captured_at",
)


class AuthError(RuntimeError):
    """The API rejected our credentials; retrying is pointless."""


class HarvestHTTPError(RuntimeError):
    def __init__(self, status: int, url: str):
        super().__init__(f"HTTP {status} from {url}")
        self.status = status


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class SimulatedClock:
    """Deterministic clock: sleeping advances time instantly."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float) -> None:
        self._now += max(0.0, seconds)

    def advance(self, seconds: float) -> None:
        self._now += seconds


class RateLimiter:
    """Sliding-window request budget; acquire() blocks until a slot frees up.

    Keeps the full request log for budget audits. Thread-safe so concurrent
    fetchers funnel through one shared budget.
    """

    def __init__(self, budget: int, window_s: float, clock=None):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.budget = budget
        self.window_s = window_s
        self.clock = clock or SystemClock()
        self.request_log: list[float] = []
        self._window: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a request may be issued; returns its timestamp."""
        with self._lock:
            while True:
                now = self.clock.now()
                while self._window and now - self._window[0] >= self.window_s:
                    self._window.popleft()
                if len(self._window) < self.budget:
                    break
                self.clock.sleep(self.window_s - (now - self._window[0]))
            self._window.append(now)
            self.request_log.append(now)
            return now

    def preload(self, timestamps: Iterable[float]) -> None:
        """Seed the window from a previous run's request log tail."""
        with self._lock:
            for t in sorted(timestamps):
                self._window.append(t)


def audit_sliding_window(timestamps: Sequence[float], budget: int, window_s: float) -> int:
    """Largest request count in any window; <= budget means the limiter held."""
    worst = 0
    for i, start in enumerate(timestamps):
        j = i
        while j < len(timestamps) and timestamps[j] - start < window_s:
            j += 1
        worst = max(worst, j - i)
    return worst


# ----------------------------------------------------------------- checkpoint


@dataclass
class HarvestCheckpoint:
    completed_tile_ids: set[str] = field(default_factory=set)
    failed_tile_ids: dict[str, int] = field(default_factory=dict)
    completed_sequence_ids: set[str] = field(default_factory=set)
    failed_sequence_ids: dict[str, int] = field(default_factory=dict)
    request_log: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.completed_sequence_ids & set(self.failed_sequence_ids):
            raise ValueError("completed and failed sequence sets overlap")
        if self.completed_tile_ids & set(self.failed_tile_ids):
            raise ValueError("completed and failed tile sets overlap")

    def to_json(self) -> dict:
        return {
            "completed_tile_ids": sorted(self.completed_tile_ids),
            "failed_tile_ids": dict(sorted(self.failed_tile_ids.items())),
            "completed_sequence_ids": sorted(self.completed_sequence_ids),
            "failed_sequence_ids": dict(sorted(self.failed_sequence_ids.items())),
            "request_log": {k: v for k, v in sorted(self.request_log.items())},
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "HarvestCheckpoint":
        return cls(
            completed_tile_ids=set(data.get("completed_tile_ids", [])),
            failed_tile_ids=dict(data.get("failed_tile_ids", {})),
            completed_sequence_ids=set(data.get("completed_sequence_ids", [])),
            failed_sequence_ids=dict(data.get("failed_sequence_ids", {})),
            request_log={k: list(v) for k, v in data.get("request_log", {}).items()},
        )


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def save_checkpoint(cp: HarvestCheckpoint, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(cp.to_json(), indent=1, sort_keys=True))


def load_checkpoint(path: str | Path) -> HarvestCheckpoint:
    path = Path(path)
    if not path.exists():
        return HarvestCheckpoint()
    with path.open(encoding="utf-8") as fh:
        return HarvestCheckpoint.from_json(json.load(fh))


# --------------------------------------------------------------------- client


def _default_http_get(url: str, timeout: float = 30.0) -> bytes:
    req = urllib.request.Request(url, headers={"User-Agent": "surface-forge/0.1"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.read()
    except urllib.error.HTTPError as exc:
        raise HarvestHTTPError(exc.code, url) from exc


class MapillaryClient:
    """Thin client for the tile (sequences) and graph (image metadata) endpoints.

    The wire format is JSON: tiles respond with
    ``{"sequences": [{"id": ..., "coordinates": [[lon, lat], ...]}]}`` and the
    graph endpoint with ``{"data": [{image fields}]}``. A bearer token is
    passed as ``access_token``; a missing token aborts up front.
    """

    def __init__(
        self,
        tiles_url: str,
        graph_url: str,
        token: str | None = None,
        *,
        tile_limiter: RateLimiter | None = None,
        graph_limiter: RateLimiter | None = None,
        http_get: Callable[[str], bytes] = _default_http_get,
        clock=None,
        fields: Sequence[str] = IMAGE_FIELDS,
    ):
        token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        if not token:
            raise AuthError(
                f"no API token: set the {TOKEN_ENV_VAR} environment variable or pass token="
            )
        clock = clock or SystemClock()
        self.tiles_url = tiles_url.rstrip("/")
        self.graph_url = graph_url
        self.token = token
        self.clock = clock
        self.tile_limiter = tile_limiter or RateLimiter(*TILE_BUDGET, clock=clock)
        self.graph_limiter = graph_limiter or RateLimiter(*GRAPH_BUDGET, clock=clock)
        self.http_get = http_get
        self.fields = tuple(fields)

    def fetch_tile_sequences(self, tile: TileId) -> list[dict]:
        self.tile_limiter.acquire()
        url = f"{self.tiles_url}/{tile.z}/{tile.x}/{tile.y}?access_token={self.token}"
        payload = json.loads(self._get_checked(url))
        return payload.get("sequences", [])

    def fetch_sequence_images(self, sequence_id: str) -> list[dict]:
        self.graph_limiter.acquire()
        query = urllib.parse.urlencode(
            {
                "sequence_id": sequence_id,
                "fields": ",".join(self.fields),
                "access_token": self.token,
            }
        )
        payload = json.loads(self._get_checked(f"{self.graph_url}?{query}"))
        return payload.get("data", [])

    def _get_checked(self, url: str) -> bytes:
        try:
            return self.http_get(url)
        except HarvestHTTPError as exc:
            if exc.status == 401:
                raise AuthError(
                    f"API rejected the token (HTTP 401); check {TOKEN_ENV_VAR}"
                ) from exc
            raise


# ------------------------------------------------------------------- harvests


def _fetch_with_retry(fetch, *, clock, max_retries: int, backoff_base_s: float = 1.0):
    attempt = 0
    while True:
        try:
            return fetch()
        except AuthError:
            raise
        except (HarvestHTTPError, OSError, json.JSONDecodeError) as exc:
            attempt += 1
            if attempt > max_retries:
                raise
            retriable_rate_limit = isinstance(exc, HarvestHTTPError) and exc.status == 429
            delay = backoff_base_s * (2 ** (attempt - 1))
            clock.sleep(delay if not retriable_rate_limit else delay * 2)


def harvest_sequences(
    tiles: Sequence[TileId],
    client: MapillaryClient,
    checkpoint: HarvestCheckpoint,
    out_dir: str | Path,
    *,
    max_retries: int = 3,
) -> HarvestCheckpoint:
    """Fetch sequences for every tile not yet completed, one file per tile.

    Failures are retried with exponential backoff up to ``max_retries``, then
    recorded as failed (missing) so the run can complete. The checkpoint is
    saved after every tile, making the harvest resumable at tile granularity.
    """
    out_dir = Path(out_dir)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.json"
    client.tile_limiter.preload(checkpoint.request_log.get("tiles", []))
    for tile in sorted(tiles, key=lambda t: (t.z, t.x, t.y)):
        key = tile.key()
        if key in checkpoint.completed_tile_ids:
            continue
        try:
            sequences = _fetch_with_retry(
                lambda: client.fetch_tile_sequences(tile),
                clock=client.clock,
                max_retries=max_retries,
            )
        except AuthError:
            raise
        except (HarvestHTTPError, OSError, json.JSONDecodeError):
            checkpoint.failed_tile_ids[key] = checkpoint.failed_tile_ids.get(key, 0) + 1
            _save_harvest_state(checkpoint, client, checkpoint_path)
            continue
        lines = [
            json.dumps({"id": s["id"], "coordinates": s["coordinates"]}, separators=(",", ":"))
            for s in sorted(sequences, key=lambda s: s["id"])
        ]
        atomic_write_text(seq_dir / f"{tile.z}_{tile.x}_{tile.y}.ndjson", "".join(l + "\n" for l in lines))
        checkpoint.completed_tile_ids.add(key)
        checkpoint.failed_tile_ids.pop(key, None)
        _save_harvest_state(checkpoint, client, checkpoint_path)
    return checkpoint


def harvest_image_metadata(
    sequence_ids: Iterable[str],
    client: MapillaryClient,
    checkpoint: HarvestCheckpoint,
    out_dir: str | Path,
    *,
    max_retries: int = 3,
) -> HarvestCheckpoint:
    """Fetch image metadata per sequence id (deduplicated), one file each."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images_raw"
    img_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.json"
    client.graph_limiter.preload(checkpoint.request_log.get("graph", []))
    for sid in sorted(set(sequence_ids)):
        if sid in checkpoint.completed_sequence_ids:
            continue
        try:
            images = _fetch_with_retry(
                lambda: client.fetch_sequence_images(sid),
                clock=client.clock,
                max_retries=max_retries,
            )
        except AuthError:
            raise
        except (HarvestHTTPError, OSError, json.JSONDecodeError):
            checkpoint.failed_sequence_ids[sid] = checkpoint.failed_sequence_ids.get(sid, 0) + 1
            _save_harvest_state(checkpoint, client, checkpoint_path)
            continue
        lines = [
            json.dumps(img, sort_keys=True, separators=(",", ":"))
            for img in sorted(images, key=lambda im: str(im.get("id")))
        ]
        atomic_write_text(img_dir / f"{sid}.ndjson", "".join(l + "\n" for l in lines))
        checkpoint.completed_sequence_ids.add(sid)
        checkpoint.failed_sequence_ids.pop(sid, None)
        _save_harvest_state(checkpoint, client, checkpoint_path)
    return checkpoint


def _save_harvest_state(cp: HarvestCheckpoint, client: MapillaryClient, path: Path) -> None:
    now = client.clock.now()
    cp.request_log["tiles"] = [
        t for t in client.tile_limiter.request_log if now - t < client.tile_limiter.window_s
    ]
    cp.request_log["graph"] = [
        t for t in client.graph_limiter.request_log if now - t < client.graph_limiter.window_s
    ]
    save_checkpoint(cp, path)


# ---------------------------------------------------------------- converters


def image_record_row_from_api(raw: Mapping, sequence_id: str) -> dict:
    """Map the API's image fields onto the documented image row columns."""
    geometry = raw.get("computed_geometry") or {}
    lon, lat = geometry.get("coordinates", (None, None))
    return {
        "id": str(raw.get("id")),
        "sequence": str(raw.get("sequence", sequence_id)),
        "url": raw.get("thumb_original_url") or "",
        "long": lon,
        "lat": lat,
        "height": raw.get("height"),
        "width": raw.get("width"),
        "altitude": raw.get("computed_altitude"),
        "make": raw.get("make"),
        "model": raw.get("model"),
        "creator": (raw.get("creator") or {}).get("username")
        if isinstance(raw.get("creator"), Mapping)
        else raw.get("creator"),
        "is_pano": bool(raw.get("is_pano", False)),
        "timestamp": raw.get("captured_at"),
        "country_iso": None,
        "continent": None,
        "urban_id": None,
        "hdi": None,
    }


def merge_sequence_files(out_dir: str | Path) -> Path:
    """Combine per-tile sequence files into one sorted ndjson; returns its path."""
    out_dir = Path(out_dir)
    rows: dict[str, dict] = {}
    for path in sorted((out_dir / "sequences").glob("*.ndjson")):
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    rows[row["id"]] = row
    target = out_dir / "sequences.ndjson"
    atomic_write_text(
        target,
        "".join(
            json.dumps(rows[k], separators=(",", ":")) + "\n" for k in sorted(rows)
        ),
    )
    return target


def merge_image_files(out_dir: str | Path) -> Path:
    """Combine per-sequence image metadata into one image row ndjson."""
    out_dir = Path(out_dir)
    rows = []
    for path in sorted((out_dir / "images_raw").glob("*.ndjson")):
        sid = path.stem
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rows.append(image_record_row_from_api(json.loads(line), sid))
    rows.sort(key=lambda r: (r["sequence"], r["timestamp"] or 0, r["id"]))
    target = out_dir / "images_harvested.ndjson"
    atomic_write_text(
        target,
        "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in rows),
    )
    return target
