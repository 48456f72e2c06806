"""
model persistence manager for saving and loading training checkpoints.
handles serialization of network state, the embedding spec and run metadata.
"""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import torch

from .config import Config, TrainConfig
from .exceptions import DomainError

CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_FILENAME = 'checkpoint.pt'
METADATA_FILENAME = 'checkpoint_metadata.json'


class ModelManager:
    """
    model manager class for persistence operations.
    follows single responsibility principle for checkpoint I/O.
    """

    def __init__(self, models_dir: Optional[str] = None):
        """
        initialize model manager.

        args:
            models_dir: directory holding checkpoint.pt (default: Config.OUTPUT_DIR)
        """
        self.models_dir = Path(models_dir) if models_dir else Path(Config.OUTPUT_DIR)
        self._ensure_models_directory()

    def _ensure_models_directory(self) -> None:
        """create models directory if it doesn't exist."""
        self.models_dir.mkdir(parents=True, exist_ok=True)

    @property
    def checkpoint_path(self) -> Path:
        return self.models_dir / CHECKPOINT_FILENAME

    def save_checkpoint(
        self,
        model: Any,
        system: str,
        config: TrainConfig,
        step: int,
        state: Optional[Dict[str, torch.Tensor]] = None,
        quiet: bool = False,
    ) -> str:
        """
        save a checkpoint with metadata.

        args:
            model: PikeModel
            system: registry name of the trained system
            config: TrainConfig of the run
            step: optimizer steps taken
            state: explicit state dict to store (default: the model's current state)
            quiet: suppress the console line

        returns:
            path to the saved checkpoint
        """
        payload = {
            'format_version': CHECKPOINT_FORMAT_VERSION,
            'architecture': model.architecture.to_dict(),
            'embedding': model.embedding_spec.to_dict(),
            'seed': model.seed,
            'state': {k: v.detach().clone() for k, v in (state or model.state_dict()).items()},
        }
        torch.save(payload, self.checkpoint_path)

        metadata = {
            'format_version': CHECKPOINT_FORMAT_VERSION,
            'system': system,
            'variant': config.variant,
            'seed': config.seed,
            'config': config.to_dict(),
            'step': int(step),
            'saved_at': datetime.now().isoformat(),
            'shapes': {k: list(v.shape) for k, v in payload['state'].items()},
        }
        metadata_path = self.models_dir / METADATA_FILENAME
        with open(metadata_path, 'w') as f:
            json.dump(metadata, f, indent=2)

        if not quiet:
            print(f"  → Checkpoint saved to: {self.checkpoint_path} (step {step})")
        return str(self.checkpoint_path)

    def load_checkpoint(self, path: Optional[str] = None) -> Tuple[Any, Dict[str, Any]]:
        """
        load a checkpoint and its metadata.

        args:
            path: checkpoint file (default: checkpoint.pt in models_dir)

        returns:
            tuple of (PikeModel, metadata)
        """
        from ..core.model import Architecture, EmbeddingSpec, init_params

        checkpoint_path = Path(path) if path else self.checkpoint_path
        if not checkpoint_path.exists():
            raise FileNotFoundError(f"no checkpoint found at {checkpoint_path}")
        payload = torch.load(checkpoint_path, map_location='cpu', weights_only=True)
        if payload.get('format_version') != CHECKPOINT_FORMAT_VERSION:
            raise DomainError(
                f"unsupported checkpoint format {payload.get('format_version')} in {checkpoint_path}"
            )

        model = init_params(
            Architecture(**payload['architecture']),
            EmbeddingSpec(**payload['embedding']),
            payload['seed'],
        )
        model.load_state_dict(payload['state'])

        metadata = {}
        metadata_path = checkpoint_path.parent / METADATA_FILENAME
        if metadata_path.exists():
            with open(metadata_path, 'r') as f:
                metadata = json.load(f)
        return model, metadata
