"""Checkpoint directory storage"""
import io
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import torch
import zstandard as zstd

from ..errors import CheckpointError, StageOrderError
from ..models.checkpoint import CHECKPOINT_FORMAT_VERSION, BlobRecord, CheckpointManifest
from ..models.config import RunConfig
from ..utils.hashing import bytes_hash
from .compression import Compressor

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
BLOB_DIR = "blobs"


class CheckpointStore:
    """
    Manages checkpoint directories: manifest.json + blobs/<group>.pt.zst

    Args:
        root: directory holding one sub-directory per checkpoint
        compression_level: zstd level for parameter blobs
    """

    def __init__(self, root: Path, compression_level: int = 3):
        self.root = root
        self.compressor = Compressor(level=compression_level)
        logger.debug(f"CheckpointStore init: root={root}")

    def path_for(self, name: str) -> Path:
        return self.root / name

    def save(
        self,
        model,
        stage: str,
        step: int,
        config: RunConfig,
        seed: int,
        final_loss: Optional[float] = None,
        name: Optional[str] = None,
    ) -> Tuple[Path, CheckpointManifest]:
        """
        Write every non-empty parameter group of a PortraitModel

        Returns:
            (checkpoint directory, manifest)
        """
        from ..core.model import PARAMETER_GROUPS

        directory = self.path_for(name or stage)
        (directory / BLOB_DIR).mkdir(parents=True, exist_ok=True)
        blobs = {}
        for group in PARAMETER_GROUPS:
            state = {k: v.detach().cpu() for k, v in model.group_state_dict(group).items()}
            if not state:
                continue
            buffer = io.BytesIO()
            torch.save(state, buffer)
            raw = buffer.getvalue()
            file = f"{BLOB_DIR}/{group}.pt.zst"
            orig, comp = self.compressor.write(raw, directory / file)
            blobs[group] = BlobRecord(
                file=file,
                hash=bytes_hash(raw),
                size=orig,
                compressed_size=comp,
                tags=[group] if group == 'temporal' else [],
                num_params=sum(v.numel() for v in state.values()),
            )

        manifest = CheckpointManifest(
            format_version=CHECKPOINT_FORMAT_VERSION,
            stage=stage,
            step=step,
            seed=seed,
            has_temporal=model.has_temporal,
            config=config.model_dump(mode='json'),
            blobs=blobs,
            final_loss=final_loss,
        )
        (directory / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2))
        logger.info(f"Saved {stage} checkpoint at step {step} to {directory}")
        return directory, manifest

    @staticmethod
    def read_manifest(directory: Path) -> CheckpointManifest:
        manifest_path = Path(directory) / MANIFEST_NAME
        if not manifest_path.exists():
            raise CheckpointError(f"No checkpoint found at {directory} (missing {MANIFEST_NAME})")
        try:
            manifest = CheckpointManifest.model_validate_json(manifest_path.read_text())
        except ValueError as e:
            raise CheckpointError(f"Corrupt checkpoint manifest {manifest_path}: {e}")
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"{manifest_path} has format version {manifest.format_version}, "
                f"expected {CHECKPOINT_FORMAT_VERSION}"
            )
        return manifest

    def load(self, directory: Path, model) -> CheckpointManifest:
        """Load blobs into model, inserting temporal layers first when the checkpoint has them"""
        directory = Path(directory)
        manifest = self.read_manifest(directory)
        if manifest.has_temporal and not model.has_temporal:
            model.insert_temporal()
        device = next(model.parameters()).device
        for group, record in manifest.blobs.items():
            blob_path = directory / record.file
            if not blob_path.exists():
                raise CheckpointError(f"Checkpoint blob missing: {blob_path}")
            try:
                raw = self.compressor.read(blob_path)
            except zstd.ZstdError as e:
                raise CheckpointError(f"Cannot decompress {blob_path}: {e}")
            if bytes_hash(raw) != record.hash:
                raise CheckpointError(f"Hash mismatch for {blob_path}")
            state = torch.load(io.BytesIO(raw), map_location=device, weights_only=True)
            model.load_group_state_dict(group, state)
        logger.info(f"Loaded {manifest.stage} checkpoint (step {manifest.step}) from {directory}")
        return manifest

    def list(self) -> List[Tuple[Path, CheckpointManifest]]:
        """All readable checkpoints under root, oldest first"""
        if not self.root.exists():
            return []
        found = []
        for directory in sorted(self.root.iterdir()):
            if (directory / MANIFEST_NAME).exists():
                try:
                    found.append((directory, self.read_manifest(directory)))
                except CheckpointError as e:
                    logger.warning(str(e))
        return sorted(found, key=lambda item: item[1].created_at)


def require_stage(
    manifest: Optional[CheckpointManifest],
    stage: str,
    allowed: Iterable[str],
) -> None:
    """Reject a checkpoint whose stage tag is not an accepted prerequisite of stage"""
    allowed = list(allowed)
    got = manifest.stage if manifest is not None else None
    if got not in allowed:
        required = " or ".join(repr(a) for a in allowed if a is not None)
        raise StageOrderError(
            f"{stage} requires a checkpoint from stage {required}, "
            f"got {repr(got) if got else 'no checkpoint'}"
        )
