"""Dataset indexing, tile cropping, sample loading and padding.

Expected layout::

    root/{train,val,test}/{images,masks}/<id>.<png|tif|tiff>

Train and val images are cut into ``tile`` x ``tile`` crops every ``stride``
pixels (no extra boundary-aligned crop); test images stay whole.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

__all__ = [
    "IMAGE_EXTENSIONS",
    "TileSpec",
    "DatasetIndex",
    "Sample",
    "PadGeometry",
    "tile_positions",
    "tile_count",
    "build_dataset_index",
    "read_raster",
    "load_sample",
    "pad_to_multiple",
    "crop_back",
    "SegmentationDataset",
]

IMAGE_EXTENSIONS = (".png", ".tif", ".tiff")
SPLITS = ("train", "val", "test")


def tile_positions(extent, tile, stride):
    """Offsets 0, stride, 2*stride, ... while offset + tile <= extent."""
    if tile < 1 or stride < 1:
        raise ValueError("tile and stride must be positive")
    if tile > extent:
        raise ValueError(f"tile size {tile} exceeds extent {extent}")
    return list(range(0, extent - tile + 1, stride))


def tile_count(extent, tile, stride):
    return (extent - tile) // stride + 1


@dataclass(frozen=True)
class TileSpec:
    """One training/validation crop, or a whole test image when ``tile_size`` is None."""

    image_id: str
    split: str
    image_path: str
    mask_path: str
    x_offset: int = 0
    y_offset: int = 0
    tile_size: Optional[int] = None
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.tile_size is not None:
            if self.x_offset < 0 or self.y_offset < 0:
                raise ValueError("tile offsets must be non-negative")
            if self.x_offset + self.tile_size > self.width or self.y_offset + self.tile_size > self.height:
                raise ValueError(f"tile {self} exceeds its source image")

    @property
    def key(self):
        if self.tile_size is None:
            return self.image_id
        return f"{self.image_id}_{self.y_offset}_{self.x_offset}"


@dataclass
class DatasetIndex:
    records: List[TileSpec] = field(default_factory=list)

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def counts(self):
        return {s: sum(r.split == s for r in self.records) for s in SPLITS}

    def save_jsonl(self, path):
        with open(path, "w") as f:
            for r in self.records:
                f.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path):
        with open(path) as f:
            return cls([TileSpec(**json.loads(line)) for line in f if line.strip()])


def _rasters(directory):
    if not directory.is_dir():
        return {}
    out = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_EXTENSIONS:
            if p.stem in out:
                raise ValueError(f"duplicate raster id {p.stem!r} in {directory}")
            out[p.stem] = p
    return out


def _image_size(path):
    try:
        with Image.open(path) as im:
            return im.size
    except Exception as e:
        raise OSError(f"cannot read image {path}: {e}") from e


def build_dataset_index(root, tile=512, stride=484, splits=SPLITS):
    root = Path(root)
    records = []
    for split in splits:
        images = _rasters(root / split / "images")
        masks = _rasters(root / split / "masks")
        orphans = sorted(set(images) - set(masks))
        if orphans:
            raise FileNotFoundError(f"{split}: images without a mask partner: {', '.join(orphans)}")
        for image_id, path in images.items():
            w, h = _image_size(path)
            common = dict(image_id=image_id, split=split, image_path=str(path), mask_path=str(masks[image_id]), width=w, height=h)
            if split == "test":
                records.append(TileSpec(**common))
                continue
            for y in tile_positions(h, tile, stride):
                for x in tile_positions(w, tile, stride):
                    records.append(TileSpec(x_offset=x, y_offset=y, tile_size=tile, **common))
    return DatasetIndex(records)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    key: str = ""

    def __post_init__(self):
        if self.image.shape[-2:] != self.mask.shape:
            raise ValueError("image and mask are not spatially congruent")


def read_raster(path, mode):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except Exception as e:
        raise OSError(f"cannot decode {path}: {e}") from e


def load_sample(spec, binarize_threshold=127):
    image = read_raster(spec.image_path, "RGB")
    mask = read_raster(spec.mask_path, "L")
    if spec.tile_size is not None:
        y, x, t = spec.y_offset, spec.x_offset, spec.tile_size
        image = image[y : y + t, x : x + t]
        mask = mask[y : y + t, x : x + t]
    image = np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32) / 255.0
    mask = (mask > binarize_threshold).astype(np.uint8)
    return Sample(image, mask, spec.key)


@dataclass(frozen=True)
class PadGeometry:
    height: int
    width: int
    pad_bottom: int
    pad_right: int


def pad_to_multiple(image, multiple=32):
    """Reflect-pad the last two axes (bottom/right) up to the next multiple."""
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    h, w = image.shape[-2:]
    pb, pr = -h % multiple, -w % multiple
    geom = PadGeometry(h, w, pb, pr)
    if not (pb or pr):
        return image, geom
    if isinstance(image, torch.Tensor):
        squeeze = image.dim() == 2
        t = image[None, None] if squeeze else image[None] if image.dim() == 3 else image
        mode = "reflect" if pb < h and pr < w else "replicate"
        t = torch.nn.functional.pad(t, (0, pr, 0, pb), mode=mode)
        out = t[0, 0] if squeeze else t[0] if image.dim() == 3 else t
        return out, geom
    widths = [(0, 0)] * (image.ndim - 2) + [(0, pb), (0, pr)]
    return np.pad(image, widths, mode="reflect" if pb < h and pr < w else "edge"), geom


def crop_back(arr, geom):
    return arr[..., : geom.height, : geom.width]


class SegmentationDataset(torch.utils.data.Dataset):
    """Torch dataset over a list of TileSpecs or pre-built Samples.

    ``augment`` turns on random flips and 90-degree rotations, drawn from a
    per-item generator seeded by (seed, epoch, index) so epochs replay exactly.
    """

    def __init__(self, items, binarize_threshold=127, augment=False, seed=0):
        self.items = list(items)
        self.binarize_threshold = binarize_threshold
        self.augment = augment
        self.seed = seed
        self.epoch = 0

    def __len__(self):
        return len(self.items)

    def sample(self, i):
        item = self.items[i]
        return item if isinstance(item, Sample) else load_sample(item, self.binarize_threshold)

    def __getitem__(self, i):
        s = self.sample(i)
        image, mask = s.image, s.mask
        if self.augment:
            rng = np.random.default_rng((self.seed, self.epoch, i))
            k = int(rng.integers(4))
            image, mask = np.rot90(image, k, axes=(1, 2)), np.rot90(mask, k)
            if rng.random() < 0.5:
                image, mask = image[:, :, ::-1], mask[:, ::-1]
        return torch.from_numpy(np.ascontiguousarray(image)), torch.from_numpy(np.ascontiguousarray(mask))
