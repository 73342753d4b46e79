"""Dataset manifests: one JSON object per line, fixed field order."""

import json
from dataclasses import dataclass

FIELD_ORDER = ("id", "mixture_path", "target_paths", "source_paths",
               "angles_deg", "overlap_ratio", "snr_db", "split")


@dataclass
class ManifestEntry:
    id: str
    mixture_path: str
    target_paths: list    # beamformed per-speaker references
    source_paths: list    # clean channel-0 reverberant images
    angles_deg: list
    overlap_ratio: float
    snr_db: float
    split: str

    def to_json(self):
        record = {
            "id": self.id,
            "mixture_path": self.mixture_path,
            "target_paths": list(self.target_paths),
            "source_paths": list(self.source_paths),
            "angles_deg": [float(a) for a in self.angles_deg],
            "overlap_ratio": float(self.overlap_ratio),
            "snr_db": float(self.snr_db),
            "split": self.split,
        }
        return json.dumps(record)


def write_manifest(path, entries):
    with open(path, "w") as handle:
        for entry in entries:
            handle.write(entry.to_json() + "\n")


def read_manifest(path, split=None):
    """
    Load manifest entries, optionally filtered by split
    Return:
        list of ManifestEntry
    """
    entries = []
    with open(path) as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            missing = [k for k in FIELD_ORDER if k not in record]
            if missing:
                raise ValueError(f"{path}:{line_no}: missing fields {missing}")
            entry = ManifestEntry(**{k: record[k] for k in FIELD_ORDER})
            if split is None or entry.split == split:
                entries.append(entry)
    return entries
