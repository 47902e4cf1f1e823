"""Class-disjoint fold definitions for PASCAL-5i, COCO-20i, COCO->PASCAL and the synthetic set."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import UnknownFold

DATASETS = ("pascal5i", "coco20i", "coco_to_pascal", "synthetic")

PASCAL_CLASSES = (
    "Aeroplane", "Bicycle", "Bird", "Boat", "Bottle",
    "Bus", "Car", "Cat", "Chair", "Cow",
    "Dining table", "Dog", "Horse", "Motorbike", "Person",
    "Potted plant", "Sheep", "Sofa", "Train", "TV/monitor",
)  # fmt: skip

# COCO category order; fold k holds every fourth class starting at index k.
COCO_CLASSES = (
    "Person", "Bicycle", "Car", "Motorcycle", "Airplane", "Bus", "Train", "Truck",
    "Boat", "Traffic light", "Fire hydrant", "Stop sign", "Parking meter", "Bench",
    "Bird", "Cat", "Dog", "Horse", "Sheep", "Cow", "Elephant", "Bear", "Zebra",
    "Giraffe", "Backpack", "Umbrella", "Handbag", "Tie", "Suitcase", "Frisbee",
    "Skis", "Snowboard", "Sports ball", "Kite", "Baseball bat", "Baseball glove",
    "Skateboard", "Surfboard", "Tennis racket", "Bottle", "Wine glass", "Cup",
    "Fork", "Knife", "Spoon", "Bowl", "Banana", "Apple", "Sandwich", "Orange",
    "Broccoli", "Carrot", "Hot dog", "Pizza", "Donut", "Cake", "Chair", "Couch",
    "Potted plant", "Bed", "Dining table", "Toilet", "TV", "Laptop", "Mouse",
    "Remote", "Keyboard", "Cell phone", "Microwave", "Oven", "Toaster", "Sink",
    "Refrigerator", "Book", "Clock", "Vase", "Scissors", "Teddy bear", "Hair drier",
    "Toothbrush",
)  # fmt: skip

# Test-class rows exactly as printed in the published split tables.
PUBLISHED_PASCAL5I = (
    ("Aeroplane", "Bicycle", "Bird", "Boat", "Bottle"),
    ("Bus", "Car", "Cat", "Chair", "Cow"),
    ("Dining table", "Dog", "Horse", "Motorbike", "Person"),
    ("Potted plant", "Sheep", "Sofa", "Train", "TV/monitor"),
)
PUBLISHED_COCO20I = (
    ("Person", "Airplane", "Boat", "Parking meter", "Dog", "Elephant", "Backpack",
     "Suitcase", "Sports ball", "Skateboard", "Wine glass", "Spoon", "Sandwich",
     "Hot dog", "Chair", "Dining table", "Mouse", "Microwave", "Sink", "Scissors"),
    ("Bicycle", "Bus", "Traffic light", "Bench", "Horse", "Bear", "Umbrella", "Frisbee",
     "Kite", "Surfboard", "Cup", "Bowl", "Spoon", "Orange", "Pizza", "Couch", "Toilet",
     "Remote", "Oven", "Book", "Teddy bear"),
    ("Car", "Train", "Fire hydrant", "Bird", "Sheep", "Zebra", "Handbag", "Skis",
     "Baseball bat", "Tennis racket", "Fork", "Banana", "Broccoli", "Donut", "Potted plant",
     "TV", "Keyboard", "Toaster", "Clock", "Hair drier"),
    ("Motorcycle", "Truck", "Stop sign", "Cat", "Cow", "Giraffe", "Tie", "Snowboard",
     "Baseball glove", "Bottle", "Knife", "Apple", "Carrot", "Cake", "Bed", "Laptop",
     "Cell phone", "Sink", "Vase", "Toothbrush"),
)  # fmt: skip
PUBLISHED_COCO_TO_PASCAL = (
    ("Aeroplane", "Boat", "Chair", "Dining table", "Dog", "Person"),
    ("Horse", "Sofa", "Bicycle", "Bus"),
    ("Bird", "Car", "Potted plant", "Sheep", "Train", "TV/monitor"),
    ("Bottle", "Cow", "Cat", "Motorbike"),
)

# The printed COCO-20i table repeats two classes (Spoon in folds 0 and 1, Sink in
# folds 0 and 3) and drops Refrigerator. The working split is the interleaved one
# the table is meant to show: it differs only at those entries.
COCO20I_FOLDS = tuple(COCO_CLASSES[k::4] for k in range(4))

# PASCAL names that COCO spells differently
PASCAL_TO_COCO = {"Aeroplane": "Airplane", "Motorbike": "Motorcycle", "Sofa": "Couch", "TV/monitor": "TV"}

SYNTH_CLASSES = ("circle", "square", "triangle", "cross", "ring", "stripe")


@dataclass(frozen=True)
class FoldSpec:
    dataset: str
    fold: int
    test_classes: tuple[str, ...]
    train_classes: tuple[str, ...]

    def classes(self, split: str) -> tuple[str, ...]:
        if split == "test":
            return self.test_classes
        if split == "train":
            return self.train_classes
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")


def n_folds(dataset: str, classes=None) -> int:
    if dataset == "synthetic":
        return len(classes or SYNTH_CLASSES) // 2
    return 4


def _excluding(pool, test) -> tuple[str, ...]:
    return tuple(c for c in pool if c not in set(test))


def fold_spec(dataset: str, fold: int, classes=None) -> FoldSpec:
    """Fold ``fold`` of ``dataset``; ``classes`` only applies to the synthetic set.

    Synthetic folds hold out consecutive pairs of shape classes.
    """
    if dataset not in DATASETS:
        raise UnknownFold(f"unknown dataset {dataset!r}; expected one of {DATASETS}")
    if not isinstance(fold, int) or not 0 <= fold < n_folds(dataset, classes):
        raise UnknownFold(f"{dataset} has no fold {fold!r}")
    if dataset == "pascal5i":
        test = PUBLISHED_PASCAL5I[fold]
        return FoldSpec(dataset, fold, test, _excluding(PASCAL_CLASSES, test))
    if dataset == "coco20i":
        test = COCO20I_FOLDS[fold]
        return FoldSpec(dataset, fold, test, _excluding(COCO_CLASSES, test))
    if dataset == "coco_to_pascal":
        # train on COCO's base classes for the fold, test on PASCAL classes absent from them
        test = PUBLISHED_COCO_TO_PASCAL[fold]
        return FoldSpec(dataset, fold, test, _excluding(COCO_CLASSES, COCO20I_FOLDS[fold]))
    names = tuple(classes or SYNTH_CLASSES)
    test = names[2 * fold : 2 * fold + 2]
    return FoldSpec(dataset, fold, test, _excluding(names, test))


def canonical_name(name: str) -> str:
    """Map a PASCAL class name onto the COCO vocabulary (identity for everything else)."""
    return PASCAL_TO_COCO.get(name, name)
