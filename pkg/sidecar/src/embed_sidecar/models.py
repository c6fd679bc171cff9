"""Embedding model backends.

StubModel is a fixed-seed random projection over cheap deterministic
features; it exercises the full protocol without any model weights, so CI
never needs a download. ClipModel wraps a pretrained contrastive
text/image model when one is available.

Vectors are returned raw (unnormalized); normalization is the client's
job, keeping a single normalization site across providers.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


class ImageDecodeFailure(ValueError):
    pass


class StubModel:
    """Seeded random projection; bitwise-deterministic for identical inputs."""

    def __init__(self, dim: int = 64, seed: int = 1234):
        self.dim = dim
        self.model_id = f"stub-projection-{dim}d-seed{seed}"
        rng = np.random.default_rng(seed)
        self._text_projection = rng.normal(size=(dim, 256))
        self._image_projection = rng.normal(size=(dim, 64))

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            histogram = np.zeros(256)
            for byte in text.encode("utf-8"):
                histogram[byte] += 1.0
            out.append(self._text_projection @ histogram)
        return out

    def embed_image(self, data: bytes) -> np.ndarray:
        try:
            with Image.open(io.BytesIO(data)) as img:
                img.load()
                thumb = img.convert("L").resize((8, 8), Image.BILINEAR)
        except Exception as exc:
            raise ImageDecodeFailure(str(exc)) from exc
        features = np.asarray(thumb, dtype=np.float64).ravel()
        return self._image_projection @ features


class ClipModel:
    """Pretrained contrastive text/image encoder via transformers."""

    def __init__(self, model_name: str, device: str = "cpu"):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.device = device
        self.model_id = model_name
        self._model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self._processor = CLIPProcessor.from_pretrained(model_name)
        self.dim = int(self._model.config.projection_dim)

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        inputs = self._processor(text=texts, return_tensors="pt", padding=True,
                                 truncation=True).to(self.device)
        with self._torch.no_grad():
            features = self._model.get_text_features(**inputs)
        return [row.cpu().numpy().astype(np.float64) for row in features]

    def embed_image(self, data: bytes) -> np.ndarray:
        try:
            with Image.open(io.BytesIO(data)) as img:
                img.load()
                rgb = img.convert("RGB")
        except Exception as exc:
            raise ImageDecodeFailure(str(exc)) from exc
        inputs = self._processor(images=rgb, return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            features = self._model.get_image_features(**inputs)
        return features[0].cpu().numpy().astype(np.float64)


def load_model(name: str, dim: int = 64, seed: int = 1234, device: str = "cpu"):
    if name == "stub":
        return StubModel(dim=dim, seed=seed)
    return ClipModel(name, device=device)
