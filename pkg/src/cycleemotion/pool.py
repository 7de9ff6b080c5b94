"""History of generated images used to update the image discriminators."""

from __future__ import annotations

import random
from typing import Optional

import torch


class ImagePool:
    """Fixed-capacity replay buffer of generated images.

    While filling, every query stores and returns its input. Once full, a
    query returns its input with probability 0.5; otherwise it returns a
    uniformly chosen stored image and stores the input in its place.
    """

    def __init__(self, capacity: int = 50, seed: Optional[int] = None):
        if capacity < 0:
            raise ValueError("pool capacity must be non-negative")
        self.capacity = capacity
        self.buffer: list[torch.Tensor] = []
        self.rng = random.Random(seed)

    def __len__(self):
        return len(self.buffer)

    def query_one(self, image: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return image
        image = image.detach()
        if len(self.buffer) < self.capacity:
            self.buffer.append(image.clone())
            return image
        if self.rng.random() < 0.5:
            return image
        idx = self.rng.randrange(self.capacity)
        old = self.buffer[idx]
        self.buffer[idx] = image.clone()
        return old

    def query(self, images: torch.Tensor) -> torch.Tensor:
        """Apply :meth:`query_one` to each image of a B x C x H x W batch."""
        if self.capacity == 0:
            return images
        return torch.stack([self.query_one(img) for img in images])

    def state_dict(self) -> dict:
        return {"capacity": self.capacity, "buffer": list(self.buffer), "rng": self.rng.getstate()}

    def load_state_dict(self, state: dict) -> None:
        self.capacity = state["capacity"]
        self.buffer = list(state["buffer"])
        self.rng.setstate(state["rng"])


def pool_query(pool: ImagePool, image: torch.Tensor) -> torch.Tensor:
    return pool.query_one(image)
