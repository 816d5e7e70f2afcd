import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

logger = logging.getLogger(__name__)

META_FILENAME = "meta.json"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class ArtifactWriter:
    """
    Writes the output files of one CLI run into a directory and records them,
    with the inputs and resolved configuration, in ``meta.json``.

    meta.json carries content hashes only (no timestamps or absolute paths), so
    two runs with identical flags produce identical directories.
    """

    def __init__(self, out_dir: Union[str, Path], command: str, config: Dict[str, Any],
                 parameters: Optional[Dict[str, Any]] = None):
        self.out_dir = Path(out_dir)
        self.command = command
        self.config = config
        self.parameters = parameters or {}
        self.inputs: List[Dict[str, str]] = []
        self.outputs: Dict[str, str] = {}
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def add_input(self, path: Union[str, Path]) -> None:
        self.inputs.append({"path": Path(path).name, "sha256": sha256_file(path)})

    def add_output(self, path: Union[str, Path]) -> None:
        """Record a file that another component wrote under ``out_dir``."""
        path = Path(path)
        self.outputs[path.relative_to(self.out_dir).as_posix()] = sha256_file(path)

    def write_bytes(self, name: str, data: bytes) -> Path:
        target = self.out_dir / name
        target.write_bytes(data)
        self.outputs[name] = sha256_bytes(data)
        logger.debug(f"Wrote {target} ({len(data)} bytes)")
        return target

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name: str, obj: Any) -> Path:
        return self.write_text(name, dump_json(obj))

    def meta(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "parameters": self.parameters,
            "inputs": sorted(self.inputs, key=lambda i: (i["path"], i["sha256"])),
            "outputs": [{"path": name, "sha256": digest} for name, digest in sorted(self.outputs.items())],
        }

    def finalize(self) -> Path:
        target = self.out_dir / META_FILENAME
        target.write_text(dump_json(self.meta()), encoding="utf-8")
        logger.info(f"{self.command}: wrote {len(self.outputs)} artifacts to {self.out_dir}")
        return target
