"""
Run directories, CSV/JSON writers, run manifests and the model artifact store
"""
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from claimsrisk import __version__
from claimsrisk.data.models import FeatureConfig, ModelArtifact, RunManifest
from claimsrisk.errors import ArtifactError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST = "manifest.json"
MODEL = "model.json"


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_json(value: Any) -> str:
    """Digest of a canonical JSON rendering"""
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="json")
    text = json.dumps(value, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunContext:
    """
    One command run: output directory, input digests and timings.

    finish() writes manifest.json next to the outputs.
    """

    def __init__(self, command: str, out_dir: PathLike, argv: Optional[List[str]] = None):
        self.command = command
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command=command, argv=list(argv or []), version=__version__)
        self.outputs: List[str] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def record_input(self, path: Optional[PathLike]) -> None:
        if path is None:
            return
        self.manifest.inputs[str(path)] = sha256_file(path)

    def record_config(self, config: FeatureConfig) -> None:
        self.manifest.config_digest = sha256_json(config)

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.manifest.timings[stage] = round(time.perf_counter() - start, 6)

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        target = self.path(name)
        write_csv(frame, target)
        self.outputs.append(name)
        return target

    def write_json(self, name: str, value: Any) -> Path:
        target = self.path(name)
        write_json(value, target)
        self.outputs.append(name)
        return target

    def finish(self) -> Path:
        target = self.path(MANIFEST)
        write_json(self.manifest, target)
        logger.info("Wrote %d outputs and %s to %s", len(self.outputs), MANIFEST, self.out_dir)
        return target


def write_csv(frame: pd.DataFrame, target: PathLike) -> None:
    # Fixed float format keeps reruns byte-identical
    frame.to_csv(target, index=False, float_format="%.10g", lineterminator="\n")


def _default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def to_jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    return value


def write_json(value: Any, target: PathLike) -> None:
    with open(target, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(value), f, indent=2, sort_keys=True, default=_default)
        f.write("\n")


def read_json(source: PathLike) -> Any:
    path = Path(source)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_model(artifact: ModelArtifact, target: PathLike) -> None:
    write_json(artifact, target)


def load_model(source: PathLike) -> ModelArtifact:
    try:
        return ModelArtifact.model_validate(read_json(source))
    except ValidationError as e:
        raise ArtifactError(f"{source} is not a model artifact: {e.errors()[0]['msg']}") from e


def read_csv(source: PathLike, required: Iterable[str] = ()) -> pd.DataFrame:
    path = Path(source)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    frame = pd.read_csv(path)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ArtifactError(f"{path} lacks column(s) {', '.join(missing)}")
    return frame


def read_predictions(source: PathLike, ids: List[str]) -> np.ndarray:
    """
    External predictions (id, logit) aligned to the given person ids.

    Every id must appear exactly once.
    """
    frame = read_csv(source, ["id", "logit"])
    frame["id"] = frame["id"].astype(str)
    if frame["id"].duplicated().any():
        raise ArtifactError(f"{source} contains duplicate ids")
    lookup: Dict[str, float] = dict(zip(frame["id"], frame["logit"].astype(float)))
    missing = [i for i in ids if i not in lookup]
    if missing:
        raise ArtifactError(
            f"{source} lacks predictions for {len(missing)} person(s), e.g. '{missing[0]}'"
        )
    extra = len(lookup) - len(ids)
    if extra > 0:
        raise ArtifactError(f"{source} has {extra} id(s) not in the cohort")
    return np.array([lookup[i] for i in ids])
