"""HTTP job service around the matting pipeline.

Sessions and jobs live on disk under the store directory, so a
restarted service picks up exactly where it stopped: sessions are
listed again, running jobs fall back to queued, and queued jobs rerun.
Results are cached by (image content, prompt, checkpoint) so repeated
runs of an unchanged session are instant.

Store layout:
  sessions/<sid>/session.json + images/<image_id>.png
  jobs/<jid>/job.json + results/<image_id>_{alpha,guidance}.png
  cache/<key>.json
"""

from __future__ import annotations

import hashlib
import json
import os
import queue
import secrets
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException, UploadFile
from fastapi.responses import FileResponse

from . import raster
from .backend import DiffusionBackend, DiffusionConfig, ToyBackend, ToyConfig
from .core import AlphaMatte, ImagePlane, MattingRequest
from .errors import BackendError, EmptyPromptError, EmptyQueryError, IconmatError, ValidationError
from .head import TOY_HEAD, HeadConfig, build_head, load_head
from .pipeline import InContextMatter, PipelineConfig
from .prompts import parse_wire_prompt


@dataclass(frozen=True)
class ServiceSettings:
    store: Path
    backend: str = "toy"
    checkpoint: str | None = None
    port: int = 8000

    @staticmethod
    def from_env(checkpoint=None, store=None, backend=None, port=None) -> "ServiceSettings":
        return ServiceSettings(
            store=Path(store or os.environ.get("ICONMAT_STORE", "iconmat_store")),
            backend=backend or os.environ.get("ICONMAT_BACKEND", "toy"),
            checkpoint=checkpoint or os.environ.get("ICONMAT_CHECKPOINT") or None,
            port=int(port or os.environ.get("ICONMAT_PORT", "8000")),
        )


def _new_id() -> str:
    return secrets.token_hex(8)


def _job_id() -> str:
    # millisecond prefix keeps lexicographic order == creation order
    return f"{int(time.time() * 1000):013d}-{secrets.token_hex(4)}"


class Store:
    """Disk-backed session/job state. One lock guards all mutation."""

    def __init__(self, root: Path):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        (self.root / "cache").mkdir(parents=True, exist_ok=True)
        self.lock = threading.RLock()

    @staticmethod
    def _write_doc(path: Path, doc: dict) -> None:
        # request handlers read these files without the lock while the
        # worker rewrites them, so the swap must be atomic
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True, indent=2))
        os.replace(tmp, path)

    # -- sessions ---------------------------------------------------------

    def session_dir(self, sid: str) -> Path:
        return self.root / "sessions" / sid

    def create_session(self) -> dict:
        with self.lock:
            sid = _new_id()
            doc = {"session_id": sid, "images": [], "prompt": None}
            (self.session_dir(sid) / "images").mkdir(parents=True)
            self._write_session(doc)
            return doc

    def _write_session(self, doc: dict) -> None:
        self._write_doc(self.session_dir(doc["session_id"]) / "session.json", doc)

    def load_session(self, sid: str) -> dict:
        path = self.session_dir(sid) / "session.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        return json.loads(path.read_text())

    def list_sessions(self) -> list:
        with self.lock:
            out = []
            for path in sorted((self.root / "sessions").iterdir()):
                doc_path = path / "session.json"
                if doc_path.exists():
                    out.append(json.loads(doc_path.read_text()))
            return out

    def add_image(self, sid: str, name: str, raw: bytes) -> dict:
        with self.lock:
            doc = self.load_session(sid)
            image_id = _new_id()
            path = self.session_dir(sid) / "images" / f"{image_id}.png"
            suffix = Path(name).suffix.lower() or ".png"
            if suffix != ".png":
                path = path.with_suffix(suffix)
            path.write_bytes(raw)
            try:  # reject rasters that cannot be decoded
                raster.load_image(path)
            except IconmatError:
                path.unlink()
                raise HTTPException(status_code=422, detail=f"cannot decode {name!r}")
            entry = {"image_id": image_id, "name": name, "file": path.name}
            doc["images"].append(entry)
            self._write_session(doc)
            return entry

    def image_path(self, sid: str, image_id: str) -> Path:
        doc = self.load_session(sid)
        for entry in doc["images"]:
            if entry["image_id"] == image_id:
                return self.session_dir(sid) / "images" / entry["file"]
        raise HTTPException(status_code=404, detail=f"unknown image {image_id}")

    def set_prompt(self, sid: str, prompt_doc: dict) -> dict:
        with self.lock:
            doc = self.load_session(sid)
            doc["prompt"] = prompt_doc
            self._write_session(doc)
            return doc

    # -- jobs -------------------------------------------------------------

    def job_dir(self, jid: str) -> Path:
        return self.root / "jobs" / jid

    def create_job(self, session_id: str, targets: list, cache_key: str) -> dict:
        with self.lock:
            jid = _job_id()
            doc = {
                "job_id": jid,
                "session_id": session_id,
                "state": "queued",
                "progress": {"done": 0, "total": len(targets)},
                "targets": targets,
                "cache_key": cache_key,
                "error": None,
            }
            (self.job_dir(jid) / "results").mkdir(parents=True)
            self._write_job(doc)
            return doc

    def _write_job(self, doc: dict) -> None:
        self._write_doc(self.job_dir(doc["job_id"]) / "job.json", doc)

    def load_job(self, jid: str) -> dict:
        path = self.job_dir(jid) / "job.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown job {jid}")
        return json.loads(path.read_text())

    def update_job(self, jid: str, **changes) -> dict:
        with self.lock:
            doc = self.load_job(jid)
            doc.update(changes)
            self._write_job(doc)
            return doc

    def all_jobs(self) -> list:
        out = []
        for path in sorted((self.root / "jobs").iterdir()):
            doc_path = path / "job.json"
            if doc_path.exists():
                out.append(json.loads(doc_path.read_text()))
        return out

    # -- result cache -----------------------------------------------------

    def cache_lookup(self, key: str):
        path = self.root / "cache" / f"{key}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())["job_id"]

    def cache_record(self, key: str, job_id: str) -> None:
        self._write_doc(self.root / "cache" / f"{key}.json", {"job_id": job_id})


class MattingService:
    """Pipeline owner plus the single inference worker."""

    def __init__(self, settings: ServiceSettings):
        self.settings = settings
        self.store = Store(settings.store)
        self.queue: queue.Queue = queue.Queue()
        self._matter = None
        self._matter_error = None
        self._fingerprint = None
        self._worker = None

    # -- pipeline ---------------------------------------------------------

    def matter(self) -> InContextMatter:
        if self._matter is not None:
            return self._matter
        if self._matter_error is not None:
            raise self._matter_error
        try:
            if self.settings.backend == "toy":
                backend = ToyBackend(ToyConfig())
            elif self.settings.backend == "diffusion":
                backend = DiffusionBackend(DiffusionConfig())
            else:
                raise BackendError(f"unknown backend {self.settings.backend!r}")
            if self.settings.checkpoint:
                config, params = load_head(self.settings.checkpoint)
                head = build_head(config, params)
                ckpt_tag = hashlib.sha256(
                    Path(self.settings.checkpoint).read_bytes()
                ).hexdigest()[:16]
            else:
                if self.settings.backend != "toy":
                    raise BackendError("diffusion backend needs ICONMAT_CHECKPOINT")
                head = build_head(HeadConfig(**TOY_HEAD))
                ckpt_tag = "default-toy-head"
            self._matter = InContextMatter(backend, head, PipelineConfig())
            self._fingerprint = f"{backend.fingerprint()}:{ckpt_tag}"
            return self._matter
        except (BackendError, IconmatError, OSError) as exc:
            self._matter_error = exc if isinstance(exc, BackendError) else BackendError(str(exc))
            raise self._matter_error

    # -- job planning -----------------------------------------------------

    def resolve_prompt(self, session: dict):
        """Wire prompt -> (reference image id, RoiPrompt). Raises
        EmptyPromptError / ValidationError for bad content."""
        prompt_doc = session.get("prompt")
        if not prompt_doc:
            raise EmptyPromptError("no prompt set")
        sid = session["session_id"]
        ref_id = prompt_doc.get("reference_image_id")
        ref_path = self.store.image_path(sid, ref_id) if ref_id else None
        if ref_path is None:
            raise ValidationError("prompt lacks reference_image_id")
        ref_image = raster.load_image(ref_path)
        mask = None
        if prompt_doc.get("kind") == "mask":
            mask_ref = prompt_doc.get("mask_ref")
            if not mask_ref:
                raise ValidationError("mask prompt lacks mask_ref")
            mask = raster.load_binary_mask(self.store.image_path(sid, mask_ref)).data
            if mask.shape != ref_image.shape[:2]:
                raise ValidationError("mask raster does not match reference size")
        prompt = parse_wire_prompt(prompt_doc, ref_image.shape[:2], mask=mask)
        if prompt.is_empty():
            raise EmptyPromptError("prompt rasterizes to nothing")
        return ref_id, ref_image, prompt

    def cache_key(self, session: dict, targets: list) -> str:
        self.matter()  # ensure fingerprint
        hasher = hashlib.sha256()
        hasher.update(self._fingerprint.encode())
        hasher.update(json.dumps(session["prompt"], sort_keys=True).encode())
        sid = session["session_id"]
        for image_id in [session["prompt"]["reference_image_id"], *targets]:
            hasher.update(image_id.encode())
            hasher.update(self.store.image_path(sid, image_id).read_bytes())
        return hasher.hexdigest()[:32]

    def plan_targets(self, session: dict) -> list:
        prompt_doc = session["prompt"]
        excluded = {prompt_doc.get("reference_image_id"), prompt_doc.get("mask_ref")}
        return [e["image_id"] for e in session["images"] if e["image_id"] not in excluded]

    # -- worker -----------------------------------------------------------

    def start_worker(self):
        for job in self.store.all_jobs():
            if job["state"] == "running":  # interrupted by restart
                job = self.store.update_job(
                    job["job_id"], state="queued", progress={"done": 0, "total": job["progress"]["total"]}
                )
            if job["state"] == "queued":
                self.queue.put(job["job_id"])
        self._worker = threading.Thread(target=self._worker_loop, daemon=True)
        self._worker.start()

    def stop_worker(self):
        self.queue.put(None)
        if self._worker is not None:
            self._worker.join(timeout=10)

    def _worker_loop(self):
        while True:
            jid = self.queue.get()
            if jid is None:
                return
            try:
                self._run_job(jid)
            except Exception as exc:  # job must never kill the worker
                self.store.update_job(jid, state="failed", error=str(exc))

    def _run_job(self, jid: str):
        job = self.store.load_job(jid)
        if job["state"] != "queued":
            return
        job = self.store.update_job(jid, state="running")
        session = self.store.load_session(job["session_id"])
        try:
            matter = self.matter()
            _, ref_image, prompt = self.resolve_prompt(session)
            results_dir = self.store.job_dir(jid) / "results"
            done = 0
            for image_id in job["targets"]:
                target = raster.load_image(
                    self.store.image_path(session["session_id"], image_id)
                )
                request = MattingRequest(
                    targets=(target,), references=((ref_image, prompt),)
                )
                result = matter.process(request)[0]
                raster.save_alpha(
                    results_dir / f"{image_id}_alpha.png",
                    AlphaMatte(ImagePlane(result.alpha)),
                )
                raster.save_alpha(
                    results_dir / f"{image_id}_guidance.png",
                    AlphaMatte(ImagePlane(result.guidance)),
                )
                done += 1
                self.store.update_job(
                    jid, progress={"done": done, "total": len(job["targets"])}
                )
            self.store.update_job(jid, state="done")
            self.store.cache_record(job["cache_key"], jid)
        except (IconmatError, OSError) as exc:
            self.store.update_job(jid, state="failed", error=str(exc))

    def adopt_cached(self, job: dict) -> dict | None:
        """Fill a new job from an identical finished one, if any."""
        cached_jid = self.store.cache_lookup(job["cache_key"])
        if cached_jid is None:
            return None
        cached = self.store.load_job(cached_jid)
        if cached["state"] != "done":
            return None
        src = self.store.job_dir(cached_jid) / "results"
        dst = self.store.job_dir(job["job_id"]) / "results"
        for path in src.iterdir():
            (dst / path.name).write_bytes(path.read_bytes())
        return self.store.update_job(
            job["job_id"],
            state="done",
            progress={"done": len(job["targets"]), "total": len(job["targets"])},
        )


def create_app(settings: ServiceSettings | None = None) -> FastAPI:
    import torch

    torch.set_num_threads(1)
    settings = settings or ServiceSettings.from_env()
    service = MattingService(settings)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        service.start_worker()
        yield
        service.stop_worker()

    app = FastAPI(title="iconmat service", lifespan=lifespan)
    app.state.service = service

    @app.post("/sessions", status_code=201)
    def create_session():
        return service.store.create_session()

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": service.store.list_sessions()}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return service.store.load_session(sid)

    @app.post("/sessions/{sid}/images", status_code=201)
    async def upload_images(sid: str, files: list[UploadFile]):
        service.store.load_session(sid)
        uploaded = []
        for file in files:
            raw = await file.read()
            uploaded.append(service.store.add_image(sid, file.filename or "upload.png", raw))
        return {"images": uploaded}

    @app.put("/sessions/{sid}/prompt")
    def set_prompt(sid: str, prompt_doc: dict):
        session = service.store.load_session(sid)
        ref_id = prompt_doc.get("reference_image_id")
        if not isinstance(ref_id, str):
            raise HTTPException(status_code=422, detail="reference_image_id required")
        service.store.image_path(sid, ref_id)  # 404 if unknown
        try:
            probe = dict(session, prompt=prompt_doc)
            service.resolve_prompt(probe)
        except EmptyPromptError:
            pass  # emptiness is checked at job creation (409 there)
        except (ValidationError, IconmatError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        doc = service.store.set_prompt(sid, prompt_doc)
        return {"session_id": sid, "prompt": doc["prompt"]}

    @app.post("/sessions/{sid}/jobs", status_code=201)
    def create_job(sid: str):
        session = service.store.load_session(sid)
        try:
            service.resolve_prompt(session)
        except (EmptyPromptError, EmptyQueryError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (ValidationError, IconmatError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        try:
            targets = service.plan_targets(session)
            key = service.cache_key(session, targets)
        except BackendError as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        job = service.store.create_job(sid, targets, key)
        adopted = service.adopt_cached(job)
        if adopted is not None:
            return adopted
        service.queue.put(job["job_id"])
        return job

    @app.get("/jobs/{jid}")
    def get_job(jid: str):
        return service.store.load_job(jid)

    def _result_file(jid: str, image_id: str, suffix: str) -> FileResponse:
        job = service.store.load_job(jid)
        if job["state"] != "done":
            raise HTTPException(
                status_code=404, detail=f"job {jid} is {job['state']}, not done"
            )
        path = service.store.job_dir(jid) / "results" / f"{image_id}_{suffix}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no result for {image_id}")
        return FileResponse(path, media_type="image/png")

    @app.get("/jobs/{jid}/results/{image_id}")
    def get_result(jid: str, image_id: str):
        return _result_file(jid, image_id, "alpha")

    @app.get("/jobs/{jid}/guidance/{image_id}")
    def get_guidance(jid: str, image_id: str):
        return _result_file(jid, image_id, "guidance")

    return app
