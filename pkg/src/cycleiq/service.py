"""HTTP front end and persistence for rating studies.

State lives in one append-only JSON-lines event log per study; the
in-memory view is rebuilt by replaying the log, so a crashed server
loses at most a partially written line. Raters only ever see an item
index and an image reference.

Status codes: 409 when an item was already rated, 400 for out-of-order
submissions and malformed studies, 422 for scores outside 1..5, 404 for
unknown ids.
"""

from __future__ import annotations

import json
import os
import threading

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from cycleiq import mos


class StudyStore:
    """Studies and sessions backed by per-study event logs in one directory."""

    def __init__(self, root):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)
        self._studies = {}
        self._sessions = {}
        self._ordinals = {}
        self._lock = threading.Lock()

    # -- persistence ----------------------------------------------------

    def _log_path(self, study_id):
        return os.path.join(self.root, f"{study_id}.jsonl")

    def _append(self, study_id, event: dict):
        line = json.dumps(event, separators=(",", ":"))
        with open(self._log_path(study_id), "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()

    @classmethod
    def load(cls, root) -> "StudyStore":
        """Rebuild a store by replaying every event log under ``root``."""
        store = cls(root)
        for name in sorted(os.listdir(store.root)):
            if not name.endswith(".jsonl"):
                continue
            with open(os.path.join(store.root, name), encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        store._replay(json.loads(line))
        return store

    def _replay(self, event: dict):
        kind = event["event"]
        if kind == "study-created":
            study = mos.create_study(
                [tuple(m) for m in event["manifest"]],
                probe_fraction=event["probe_fraction"],
                seed=event["seed"],
                study_id=event["study"],
            )
            self._studies[study.study_id] = study
            self._ordinals[study.study_id] = 0
        elif kind == "session-created":
            study = self._studies[event["study"]]
            session = mos.create_session(
                study, event["rater"], event["ordinal"],
                session_id=event["session"],
            )
            self._sessions[session.session_id] = session
            self._ordinals[study.study_id] = event["ordinal"] + 1
        elif kind == "rating":
            sid = event["session"]
            self._sessions[sid] = mos.submit_rating(
                self._sessions[sid], event["item"], event["score"]
            )
        elif kind == "completed":
            pass  # marker only; completion is implied by the ratings
        else:
            raise ValueError(f"unknown event type {kind!r}")

    # -- operations -----------------------------------------------------

    def create_study(self, manifest, probe_fraction, seed) -> mos.MosStudy:
        with self._lock:
            study = mos.create_study(manifest, probe_fraction, seed)
            if study.study_id not in self._studies:
                self._studies[study.study_id] = study
                self._ordinals[study.study_id] = 0
                self._append(study.study_id, {
                    "event": "study-created",
                    "study": study.study_id,
                    "manifest": [
                        [m.image_id, m.method, m.task] for m in study.manifest
                    ],
                    "probe_fraction": study.probe_fraction,
                    "seed": study.seed,
                })
            return self._studies[study.study_id]

    def get_study(self, study_id) -> mos.MosStudy:
        try:
            return self._studies[study_id]
        except KeyError:
            raise KeyError(f"unknown study {study_id}") from None

    def get_session(self, session_id) -> mos.MosSession:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise KeyError(f"unknown session {session_id}") from None

    def create_session(self, study_id, rater_id) -> mos.MosSession:
        with self._lock:
            study = self.get_study(study_id)
            ordinal = self._ordinals[study_id]
            session = mos.create_session(study, rater_id, ordinal)
            self._sessions[session.session_id] = session
            self._ordinals[study_id] = ordinal + 1
            self._append(study_id, {
                "event": "session-created",
                "study": study_id,
                "session": session.session_id,
                "rater": rater_id,
                "ordinal": ordinal,
            })
            return session

    def submit(self, session_id, item: int, score: int) -> mos.MosSession:
        with self._lock:
            session = self.get_session(session_id)
            updated = mos.submit_rating(session, item, score)
            self._sessions[session_id] = updated
            self._append(updated.study_id, {
                "event": "rating",
                "session": session_id,
                "item": item,
                "score": int(score),
            })
            if updated.completed:
                self._append(updated.study_id, {
                    "event": "completed",
                    "session": session_id,
                })
            return updated

    def sessions_for(self, study_id):
        return [s for s in self._sessions.values() if s.study_id == study_id]

    def report(self, study_id) -> mos.MosReport:
        study = self.get_study(study_id)
        return mos.study_report(self.sessions_for(study_id), study)


class ManifestEntry(BaseModel):
    image: str
    method: str
    task: str


class StudyRequest(BaseModel):
    manifest: list[ManifestEntry]
    probe_fraction: float = mos.DEFAULT_PROBE_FRACTION
    seed: int = 0


class SessionRequest(BaseModel):
    rater: str = Field(min_length=1)


class RatingRequest(BaseModel):
    item: int
    score: int


def create_app(store: StudyStore, images_dir=None) -> FastAPI:
    """Wire the study store into the JSON API the rating UI talks to."""
    app = FastAPI(title="mos-service")
    images_root = os.path.realpath(images_dir) if images_dir else None

    def _get(getter, *args):
        try:
            return getter(*args)
        except KeyError as exc:
            raise HTTPException(404, detail=str(exc))

    @app.post("/studies")
    def post_study(req: StudyRequest):
        try:
            study = store.create_study(
                [(m.image, m.method, m.task) for m in req.manifest],
                req.probe_fraction,
                req.seed,
            )
        except ValueError as exc:
            raise HTTPException(400, detail=str(exc))
        return {"study": study.study_id, "items": study.n_presented}

    @app.post("/studies/{study_id}/sessions")
    def post_session(study_id: str, req: SessionRequest):
        session = _get(store.create_session, study_id, req.rater)
        return {"session": session.session_id, "total": len(session.order)}

    @app.get("/sessions/{session_id}/next")
    def get_next(session_id: str):
        session = _get(store.get_session, session_id)
        study = store.get_study(session.study_id)
        return mos.next_payload(study, session)

    @app.post("/sessions/{session_id}/ratings")
    def post_rating(session_id: str, req: RatingRequest):
        _get(store.get_session, session_id)
        try:
            session = store.submit(session_id, req.item, req.score)
        except mos.ScoreOutOfRange as exc:
            raise HTTPException(422, detail=str(exc))
        except mos.RatingConflict as exc:
            raise HTTPException(409, detail=str(exc))
        except mos.OutOfOrderRating as exc:
            raise HTTPException(400, detail=str(exc))
        return {"item": req.item, "completed": session.completed}

    @app.get("/studies/{study_id}/report")
    def get_report(study_id: str):
        study = _get(store.get_study, study_id)
        try:
            report = mos.study_report(store.sessions_for(study_id), study)
        except ValueError as exc:
            raise HTTPException(400, detail=str(exc))
        return report.to_dict()

    @app.get("/images/{name}")
    def get_image(name: str):
        if images_root is None:
            raise HTTPException(404, detail="no image directory configured")
        path = os.path.realpath(os.path.join(images_root, name))
        # realpath plus prefix check keeps requests inside the image root
        if not path.startswith(images_root + os.sep) or not os.path.isfile(path):
            raise HTTPException(404, detail=f"no such image {name}")
        return FileResponse(path)

    return app
