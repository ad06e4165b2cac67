"""Convert torchvision's ImageNet ResNet-50 weights into a ddunet archive.

Needs torchvision and network access for the first download:

    python3 scripts/convert_resnet50.py weights/resnet50-imagenet.ddw
"""

import sys

import torchvision

from ddunet import archive


def main(out):
    model = torchvision.models.resnet50(weights=torchvision.models.ResNet50_Weights.IMAGENET1K_V1)
    state = {k: v for k, v in model.state_dict().items() if not k.startswith("fc.")}
    archive.save(out, state, {"source": "torchvision resnet50 IMAGENET1K_V1"})
    print(f"wrote {len(state)} tensors to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "weights/resnet50-imagenet.ddw")
