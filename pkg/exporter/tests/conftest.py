import os

import numpy as np
import pytest
from PIL import Image


def write_digits(root, train_count, test_count, class_names, layout="folders"):
    """Materialize sklearn's digits as PNGs in the exporter's dataset layout."""
    from sklearn.datasets import load_digits
    digits = load_digits()
    images = (digits.images / 16.0 * 255).astype(np.uint8)
    labels = digits.target
    splits = {"train": range(train_count),
              "test": range(train_count, train_count + test_count)}
    for split, indices in splits.items():
        split_dir = os.path.join(root, split)
        os.makedirs(split_dir, exist_ok=True)
        rows = []
        for i in indices:
            fname = f"digit_{i:04d}.png"
            if layout == "folders":
                sub = os.path.join(split_dir, class_names[labels[i]])
                os.makedirs(sub, exist_ok=True)
                Image.fromarray(images[i], mode="L").save(os.path.join(sub, fname))
            else:
                Image.fromarray(images[i], mode="L").save(
                    os.path.join(split_dir, fname))
                rows.append(f"{fname},{labels[i]}")
        if layout == "csv":
            with open(os.path.join(split_dir, "labels.csv"), "w") as f:
                f.write("\n".join(rows) + "\n")
    return root


DIGIT_NAMES = ["zero", "one", "two", "three", "four",
               "five", "six", "seven", "eight", "nine"]


@pytest.fixture(scope="session")
def digits_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("digits")
    write_digits(str(root), 1300, 497, DIGIT_NAMES, layout="folders")
    # test split additionally as labels.csv to cover both layouts
    csv_root = tmp_path_factory.mktemp("digits_csv")
    write_digits(str(csv_root), 60, 40, DIGIT_NAMES, layout="csv")
    return {"folders": str(root), "csv": str(csv_root)}
