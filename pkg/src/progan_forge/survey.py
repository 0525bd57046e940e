"""Real-vs-fake survey service.

Participants see one image at a time and guess its origin; nothing in
any response before ``finish`` reveals labels or correctness (the
anti-bias requirement), and even the final report is totals only. Truth
labels exist solely in the server-side event log, an append-only JSONL
that :func:`aggregate` can replay into the confusion matrix at any time.
"""

from __future__ import annotations

import json
import math
import secrets
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel

REAL, FAKE = "real", "fake"
LABELS = (REAL, FAKE)
MIN_SESSION, MAX_SESSION = 25, 30
_MEDIA_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


class SurveyError(ValueError):
    """Client-input errors; carries an HTTP-ish status code."""

    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class PoolEntry:
    image_id: str
    path: str
    label: str


@dataclass
class ImagePool:
    entries: list

    def __post_init__(self):
        for e in self.entries:
            if e.label not in LABELS:
                raise ValueError(f"entry {e.image_id} has label {e.label!r}")
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("image ids must be unique")

    @classmethod
    def from_dirs(cls, real_dir, fake_dir) -> "ImagePool":
        entries = []
        for label, folder in ((REAL, real_dir), (FAKE, fake_dir)):
            paths = sorted(
                p for p in Path(folder).iterdir() if p.suffix.lower() in _MEDIA_TYPES
            )
            if not paths:
                raise FileNotFoundError(f"no images found in {folder}")
            for p in paths:
                # ids are opaque random tokens: nothing about them leaks the label
                entries.append(PoolEntry(secrets.token_hex(8), str(p), label))
        return cls(entries)

    def count(self, label: str) -> int:
        return sum(1 for e in self.entries if e.label == label)

    def by_id(self, image_id: str) -> PoolEntry:
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise KeyError(image_id)


@dataclass
class SurveySession:
    session_id: str
    image_ids: list
    truths: list  # server-side only, aligned with image_ids
    cursor: int = 0
    answers: list = field(default_factory=list)  # (image_id, guess, ts)
    state: str = "active"

    @property
    def total(self) -> int:
        return len(self.image_ids)

    def current_image(self) -> str:
        if self.state != "active" or self.cursor >= self.total:
            raise SurveyError("session complete", status=409)
        return self.image_ids[self.cursor]

    def submit(self, image_id: str, guess: str) -> int:
        if self.state != "active":
            raise SurveyError("session complete", status=409)
        if guess not in LABELS:
            raise SurveyError(f"guess must be one of {LABELS}")
        if image_id in [a[0] for a in self.answers]:
            raise SurveyError("image already answered", status=409)
        if image_id != self.image_ids[self.cursor]:
            raise SurveyError("image_id does not match the current image", status=409)
        self.answers.append((image_id, guess, time.time()))
        self.cursor += 1
        return self.cursor

    def finish(self):
        if self.state == "finished":
            raise SurveyError("session already finished", status=409)
        remaining = self.total - len(self.answers)
        if remaining:
            raise SurveyError(f"{remaining} image(s) still unanswered")
        correct = sum(
            1 for (img, guess, _), truth in zip(self.answers, self.truths) if guess == truth
        )
        self.state = "finished"
        return correct, self.total - correct


def create_session(pool: ImagePool, n: int = MIN_SESSION, seed=None) -> SurveySession:
    """Sample a session: each slot is real with probability 1/2 (its own
    coin, not a fixed half/half split), without replacement."""
    if not MIN_SESSION <= n <= MAX_SESSION:
        raise SurveyError(f"n must lie in [{MIN_SESSION}, {MAX_SESSION}], got {n}")
    need = math.ceil(n / 2)
    for label in LABELS:
        if pool.count(label) < need:
            raise SurveyError(
                f"pool needs at least {need} images of each label for n={n}"
            )
    rng = np.random.default_rng(seed)
    remaining = {
        label: [e for e in pool.entries if e.label == label] for label in LABELS
    }
    ids, truths = [], []
    for _ in range(n):
        label = REAL if rng.random() < 0.5 else FAKE
        if not remaining[label]:
            label = FAKE if label == REAL else REAL
        pick = remaining[label].pop(int(rng.integers(len(remaining[label]))))
        ids.append(pick.image_id)
        truths.append(pick.label)
    return SurveySession(session_id=secrets.token_hex(16), image_ids=ids, truths=truths)


@dataclass
class ConfusionMatrix:
    tp: int = 0  # real guessed real
    fn: int = 0  # real guessed fake
    fp: int = 0  # fake guessed real
    tn: int = 0  # fake guessed fake

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    def add(self, truth: str, guess: str) -> None:
        if truth == REAL:
            if guess == REAL:
                self.tp += 1
            else:
                self.fn += 1
        else:
            if guess == REAL:
                self.fp += 1
            else:
                self.tn += 1

    def as_dict(self) -> dict:
        return {
            "real_real": self.tp,
            "real_fake": self.fn,
            "fake_real": self.fp,
            "fake_fake": self.tn,
            "total": self.total,
            "accuracy": self.accuracy,
        }


def append_events(log_path, session: SurveySession) -> None:
    log_path = Path(log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "a") as fh:
        for (image_id, guess, ts), truth in zip(session.answers, session.truths):
            fh.write(
                json.dumps(
                    {
                        "ts": ts,
                        "session": session.session_id,
                        "image": image_id,
                        "truth": truth,
                        "guess": guess,
                    }
                )
                + "\n"
            )


def aggregate(log_path):
    """Fold the event log into (ConfusionMatrix, per-image stats, skipped).

    Corrupt lines are skipped and counted, with a warning.
    """
    matrix = ConfusionMatrix()
    per_image: dict = {}
    skipped = 0
    log_path = Path(log_path)
    if log_path.exists():
        for line in log_path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                event = json.loads(line)
                truth, guess = event["truth"], event["guess"]
                image = event["image"]
                if truth not in LABELS or guess not in LABELS:
                    raise ValueError("bad label")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                skipped += 1
                continue
            matrix.add(truth, guess)
            shown, correct = per_image.get(image, (0, 0))
            per_image[image] = (shown + 1, correct + (guess == truth))
    if skipped:
        warnings.warn(f"skipped {skipped} corrupt event record(s)", stacklevel=2)
    return matrix, per_image, skipped


class SurveyService:
    """In-memory sessions over an image pool plus the persistent event log."""

    def __init__(self, pool: ImagePool, log_path):
        self.pool = pool
        self.log_path = Path(log_path)
        self.sessions: dict = {}
        self.per_image: dict = {}
        self._lock = threading.Lock()

    def create(self, n=None, seed=None) -> SurveySession:
        session = create_session(self.pool, MIN_SESSION if n is None else n, seed)
        with self._lock:
            self.sessions[session.session_id] = session
        return session

    def _get(self, session_id: str) -> SurveySession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise SurveyError("unknown session", status=404) from None

    def next_image(self, session_id: str):
        with self._lock:
            session = self._get(session_id)
            image_id = session.current_image()
            entry = self.pool.by_id(image_id)
        data = Path(entry.path).read_bytes()
        media = _MEDIA_TYPES[Path(entry.path).suffix.lower()]
        return image_id, data, media

    def submit(self, session_id: str, image_id: str, guess: str):
        with self._lock:
            session = self._get(session_id)
            position = session.submit(image_id, guess)
            truth = session.truths[position - 1]
            shown, correct = self.per_image.get(image_id, (0, 0))
            self.per_image[image_id] = (shown + 1, correct + (guess == truth))
            return position, session.total

    def finish(self, session_id: str):
        with self._lock:
            session = self._get(session_id)
            correct, incorrect = session.finish()
            append_events(self.log_path, session)
            return correct, incorrect

    def confusion(self) -> ConfusionMatrix:
        with self._lock:
            matrix, _, _ = aggregate(self.log_path)
            return matrix


class CreateBody(BaseModel):
    n: int | None = None
    seed: int | None = None


class AnswerBody(BaseModel):
    image_id: str
    guess: str


def create_app(pool: ImagePool, log_path, ui_dir=None):
    """FastAPI application exposing the survey HTTP API."""
    from fastapi import Body, FastAPI, Request, Response
    from fastapi.responses import JSONResponse

    service = SurveyService(pool, log_path)
    app = FastAPI(title="river-survey", docs_url=None, redoc_url=None)
    app.state.service = service

    @app.exception_handler(SurveyError)
    async def survey_error_handler(_req: Request, exc: SurveyError):
        return JSONResponse(status_code=exc.status, content={"detail": str(exc)})

    @app.post("/api/sessions")
    def create(body: CreateBody | None = Body(default=None)):
        body = body or CreateBody()
        session = service.create(body.n, body.seed)
        return {"session_id": session.session_id, "total": session.total}

    @app.get("/api/sessions/{session_id}/next")
    def next_image(session_id: str):
        image_id, data, media = service.next_image(session_id)
        return Response(content=data, media_type=media, headers={"X-Image-Id": image_id})

    @app.post("/api/sessions/{session_id}/answers")
    def submit(session_id: str, body: AnswerBody):
        position, total = service.submit(session_id, body.image_id, body.guess)
        return {"position": position, "total": total}

    @app.post("/api/sessions/{session_id}/finish")
    def finish(session_id: str):
        correct, incorrect = service.finish(session_id)
        return {"correct": correct, "incorrect": incorrect}

    @app.get("/api/admin/confusion")
    def confusion():
        return service.confusion().as_dict()

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
