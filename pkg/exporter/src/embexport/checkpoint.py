"""Self-contained dual-encoder checkpoint: image tower, text tower, projection.

The image tower is a small MLP over 32x32 RGB pixels producing a D-dim
backbone feature; a bias-free linear projection maps it into the P-dim joint
space. The text tower hashes character trigrams into a fixed vocabulary and
projects the normalized counts into the joint space. Weights are drawn
deterministically from a seed, and checkpoints are saved/loaded as .pt files,
so exports are exactly reproducible.
"""
import dataclasses
import hashlib

import numpy as np
import torch
from PIL import Image

IMAGE_SIZE = 32
TEXT_BUCKETS = 2048


@dataclasses.dataclass
class CheckpointConfig:
    feature_dim: int = 64
    joint_dim: int = 32
    hidden_dim: int = 256
    seed: int = 0


class DualEncoder(torch.nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        pixels = IMAGE_SIZE * IMAGE_SIZE * 3

        def linear(n_in, n_out, bias=True):
            layer = torch.nn.Linear(n_in, n_out, bias=bias)
            with torch.no_grad():
                layer.weight.copy_(torch.randn(n_out, n_in, generator=gen)
                                   / n_in ** 0.5)
                if bias:
                    layer.bias.zero_()
            return layer

        self.image_hidden = linear(pixels, config.hidden_dim)
        self.image_out = linear(config.hidden_dim, config.feature_dim)
        self.image_proj = linear(config.feature_dim, config.joint_dim, bias=False)
        self.text_proj = linear(TEXT_BUCKETS, config.joint_dim, bias=False)
        self.eval()

    @torch.no_grad()
    def encode_image_batch(self, pixels):
        """(n, 3072) float32 pixel batch -> (n, D) backbone features."""
        h = torch.tanh(self.image_hidden(pixels))
        return self.image_out(h)

    @torch.no_grad()
    def project_image(self, features):
        return self.image_proj(features)

    def projection_matrix(self):
        """(P, D) image-to-joint projection, as stored in archives."""
        return self.image_proj.weight.detach().clone()

    @torch.no_grad()
    def encode_text(self, strings):
        """Strings -> unit-norm (n, P) joint-space embeddings."""
        counts = torch.stack([_trigram_counts(s) for s in strings])
        counts = torch.nn.functional.normalize(counts, dim=1)
        out = self.text_proj(counts)
        return torch.nn.functional.normalize(out, dim=1)


def _trigram_counts(text):
    vec = torch.zeros(TEXT_BUCKETS)
    padded = f"  {text.lower()}  "
    for i in range(len(padded) - 2):
        gram = padded[i:i + 3].encode("utf-8")
        bucket = int.from_bytes(hashlib.blake2b(gram, digest_size=4).digest(),
                                "little") % TEXT_BUCKETS
        vec[bucket] += 1.0
    return vec


def load_image(path):
    """Decode, resize, and flatten one image to the tower's pixel layout."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE),
                                        Image.Resampling.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return torch.from_numpy((arr - 0.5).reshape(-1))


def save_checkpoint(model, path):
    torch.save({"config": dataclasses.asdict(model.config),
                "state": model.state_dict()}, path)


def load_checkpoint(path):
    data = torch.load(path, map_location="cpu", weights_only=True)
    model = DualEncoder(CheckpointConfig(**data["config"]))
    model.load_state_dict(data["state"])
    model.eval()
    return model
