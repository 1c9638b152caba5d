"""Run manifests: the reproducibility record for one run directory.

A manifest snapshots every effective config value, the master seed, the
derived per-stage seeds, content hashes of the dataset files, and per
stage the input fingerprint plus the artifact hash. A rerun compares
fingerprints to skip finished stages, and a stage refuses to consume an
upstream artifact whose bytes no longer match the manifest.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import RunConfig
from .seeds import derive_seed


class FingerprintMismatch(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def dataset_fingerprint(files) -> str:
    return sha256_text(*[f"{Path(f).name}:{sha256_file(f)}" for f in files])


def config_section_text(cfg: RunConfig, section: str) -> str:
    tree = cfg.as_tree()[section]
    return json.dumps(tree, sort_keys=True)


@dataclass
class RunManifest:
    run_id: str
    master_seed: int
    config: dict = field(default_factory=dict)
    dataset_fingerprint: str = ""
    stage_seeds: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    tool_version: str = __version__
    created: float = field(default_factory=time.time)

    @classmethod
    def fresh(cls, run_id: str, master_seed: int, cfg: RunConfig,
              ds_fp: str, num_classes: int) -> "RunManifest":
        seeds = {
            "squeeze": derive_seed(master_seed, "squeeze"),
            "eval": derive_seed(master_seed, "eval"),
            "recover": {
                str(c): derive_seed(master_seed, "recover", c)
                for c in range(num_classes)
            },
        }
        return cls(run_id=run_id, master_seed=master_seed, config=cfg.as_tree(),
                   dataset_fingerprint=ds_fp, stage_seeds=seeds)

    def record_stage(self, name: str, fingerprint: str, artifact: str,
                     wall_s: float) -> None:
        finished = time.time()
        self.stages[name] = {
            "fingerprint": fingerprint,
            "artifact": artifact,
            "artifact_sha256": sha256_file(artifact) if Path(artifact).exists() else "",
            "wall_s": wall_s,
            "started": finished - wall_s,
            "finished": finished,
        }
        self.artifacts[name] = artifact

    def stage_is_current(self, name: str, fingerprint: str) -> bool:
        entry = self.stages.get(name)
        if not entry or entry["fingerprint"] != fingerprint:
            return False
        artifact = Path(entry["artifact"])
        if not artifact.exists():
            return False
        return sha256_file(artifact) == entry["artifact_sha256"]

    def verify_artifact(self, name: str) -> str:
        """Return the artifact path after checking its recorded hash."""
        entry = self.stages.get(name)
        if not entry:
            raise FingerprintMismatch(f"stage {name} has no recorded artifact")
        path = Path(entry["artifact"])
        if not path.exists():
            raise FingerprintMismatch(f"{path}: artifact missing")
        actual = sha256_file(path)
        if actual != entry["artifact_sha256"]:
            raise FingerprintMismatch(
                f"{path}: artifact hash {actual[:12]}... does not match the "
                f"manifest record {entry['artifact_sha256'][:12]}..."
            )
        return str(path)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(**data)
