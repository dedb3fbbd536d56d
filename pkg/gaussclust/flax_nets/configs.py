from typing import Dict, List, Tuple

from .convnet import LayerSpec, conv_output_size


def _block(features: int, depth: int = 3, kernel_size: int = 3, padding: int = 0) -> List[LayerSpec]:
    return [(features, kernel_size, padding)] * depth


# Image feature stacks; the trailing 1x1 Conv-k is added by ImageFeatureModule.
ARCHITECTURES: Dict[str, Dict] = {
    "stl10": {
        "input_size": (96, 96),
        "layers": _block(64) + ["M"] + _block(128) + ["M"] + _block(256) + ["M"],
    },
    "imagenet_dog": {
        "input_size": (96, 96),
        "layers": [(64, 5, 1)] + _block(64, 2) + ["M"] + _block(128) + ["M"]
                  + _block(256) + ["M"] + [(256, 3, 0)],
    },
    "cifar": {
        "input_size": (32, 32),
        "layers": _block(64, padding=1) + ["M"] + _block(128) + ["M"],
    },
    "imagenet_dog_128": {
        "input_size": (128, 128),
        "layers": [(64, 7, 1)] + _block(64, 2) + ["M"] + _block(128) + ["M"]
                  + _block(256) + ["M"] + _block(256),
    },
    "shapes64": {
        "input_size": (64, 64),
        "layers": _block(32, 2) + ["M"] + _block(64, 2) + ["M"] + _block(64, 1) + ["M"],
    },
}

# Attention map resolution variants on 128x128 inputs, one extra unpadded
# Conv-256 per step from 10x10 down to 2x2. The 10/8/4/2 stacks are the
# published ones; imagenet10_128 (6x6) is interpolated between att8 and att4.
for _extra, _name in ((0, "imagenet10_128_att10"), (1, "imagenet10_128_att8"),
                      (2, "imagenet10_128"), (3, "imagenet10_128_att4"),
                      (4, "imagenet10_128_att2")):
    ARCHITECTURES[_name] = {
        "input_size": (128, 128),
        "layers": _block(64) + ["M"] + _block(128) + ["M"] + _block(256) + ["M"] + _block(256, _extra),
    }


def get_architecture(name: str) -> Tuple[Tuple[int, int], List[LayerSpec]]:
    """Returns (input_size, layers) of a named preset"""
    if name not in ARCHITECTURES:
        raise ValueError(f"Unknown architecture '{name}'. Available: {sorted(ARCHITECTURES)}")
    preset = ARCHITECTURES[name]
    return tuple(preset["input_size"]), list(preset["layers"])
