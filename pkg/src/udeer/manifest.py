"""Run manifests: enough provenance to reproduce a run exactly.

Every CLI command writes one ``manifest.json`` into its output directory
holding the config snapshot, seeds, SHA-256 checksums of the input files,
the artifact paths it wrote, the tool version, the selected kernel
backend, and a timestamp.  Re-running a command whose manifest matches an
existing one (everything except the timestamp) reproduces identical
checkpoints and reports.
"""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

from udeer import __version__
from udeer._kernels import BACKEND


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def tree_checksums(root) -> dict[str, str]:
    """Relative path -> sha256 for every file under `root` (sorted)."""
    root = Path(root)
    if root.is_file():
        return {root.name: file_sha256(root)}
    out: dict[str, str] = {}
    if root.is_dir():
        for path in sorted(p for p in root.rglob("*") if p.is_file()):
            out[path.relative_to(root).as_posix()] = file_sha256(path)
    return out


def write_manifest(out_dir, command: str, config: dict, seeds: dict, inputs: dict, artifacts: list[str]) -> Path:
    """`inputs` maps a label to a file or directory to checksum."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    body = {
        "tool": "udeer",
        "version": __version__,
        "backend": BACKEND,
        "command": command,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        "pipeline": {
            # fixed choices every run inherits: which calibration entry feeds
            # the image stream, and the adapted-LiDAR channel layout
            "camera_key": "P2",
            "lidar_input_channels": ["adm", "range", "hit"],
        },
        "config": {k: _jsonable(v) for k, v in config.items()},
        "seeds": seeds,
        "input_checksums": {label: tree_checksums(path) for label, path in inputs.items()},
        "artifacts": sorted(artifacts),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    return value
