"""Dataset manifests stored as JSON lines.

The first line is a header object (``{"manifest_version": 1, "resolution": N}``);
every following line is one slice record. Paths are relative to the dataset
root, which is the directory holding the manifest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

MANIFEST_VERSION = 1
LABELS = ("normal", "covid")


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class SliceRecord:
    patient_id: str
    image_path: str
    label: str
    lung_mask_path: str | None = None
    infection_mask_path: str | None = None

    def __post_init__(self):
        if not self.patient_id:
            raise IngestionError("patient_id must be nonempty")
        if self.label not in LABELS:
            raise IngestionError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def target(self) -> int:
        """1 for covid, 0 for normal."""
        return LABELS.index(self.label)


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    resolution: int = 64
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.image_path in seen:
                raise IngestionError(f"duplicate image path {rec.image_path!r}")
            seen.add(rec.image_path)

    def __len__(self):
        return len(self.records)

    def patients(self, label=None):
        out = []
        for rec in self.records:
            if (label is None or rec.label == label) and rec.patient_id not in out:
                out.append(rec.patient_id)
        return out

    def labels_by_patient(self):
        labels = {}
        for rec in self.records:
            if labels.setdefault(rec.patient_id, rec.label) != rec.label:
                raise IngestionError(f"patient {rec.patient_id!r} has slices with different labels")
        return labels

    def subset(self, patient_ids):
        keep = set(patient_ids)
        return DatasetManifest([r for r in self.records if r.patient_id in keep], self.resolution, self.root)

    def resolve(self, rel):
        if rel is None:
            return None
        base = self.root if self.root is not None else Path(".")
        return base / rel

    def dumps(self) -> str:
        lines = [json.dumps({"manifest_version": MANIFEST_VERSION, "resolution": self.resolution}, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path, root=None):
        path = Path(path)
        try:
            lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        except OSError as exc:
            raise IngestionError(f"cannot read manifest {path}: {exc}") from None
        if not lines:
            raise IngestionError(f"empty manifest {path}")
        try:
            header = json.loads(lines[0])
            if header.get("manifest_version") != MANIFEST_VERSION:
                raise IngestionError(f"{path}: unsupported manifest version {header.get('manifest_version')!r}")
            records = [SliceRecord(**json.loads(ln)) for ln in lines[1:]]
        except (json.JSONDecodeError, TypeError) as exc:
            raise IngestionError(f"{path}: malformed manifest ({exc})") from None
        return cls(records, int(header["resolution"]), Path(root) if root else path.parent)
