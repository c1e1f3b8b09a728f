"""Gesture label vocabulary: 15 classes in 3 categories of 5."""

DIGITS = ("1", "2", "3", "4", "5")
LETTERS = ("A", "B", "C", "D", "E")
SHAPES = ("circle", "diamond", "triangle", "check", "cross")

CATEGORIES = {
    "digits": DIGITS,
    "letters": LETTERS,
    "shapes": SHAPES,
}

ALL_LABELS = DIGITS + LETTERS + SHAPES

_LABEL_TO_CATEGORY = {
    label: cat for cat, labels in CATEGORIES.items() for label in labels
}

# stable per-label index for seed derivation (never use hash())
LABEL_INDEX = {label: i for i, label in enumerate(ALL_LABELS)}


def category_of(label: str) -> str:
    try:
        return _LABEL_TO_CATEGORY[label]
    except KeyError:
        raise ValueError(f"unknown gesture label: {label!r}")


def canonical_label(text: str, valid_labels) -> str | None:
    """Case-insensitive match of a candidate string against a label set."""
    cleaned = text.strip()
    for label in valid_labels:
        if cleaned.lower() == label.lower():
            return label
    return None
