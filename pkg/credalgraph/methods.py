from typing import Any, Iterable, Optional, Union
from pathlib import Path
import json
import csv

import numpy as np

from .errors import ShapeError


class Methods:
    @staticmethod
    def derive_seed(seed: int, *salts: int) -> int:
        """
        Mixes a base seed with any number of integer salts into a new 32-bit seed.
        The same inputs always produce the same output, on any platform
        """

        return int(np.random.SeedSequence([seed, *salts]).generate_state(1)[0])

    @staticmethod
    def rng(seed: int, *salts: int) -> np.random.Generator:
        return np.random.default_rng(Methods.derive_seed(seed, *salts))

    @staticmethod
    def read_json(path: Union[str, Path]) -> Any:
        with open(path, "r", encoding="utf-8") as file:
            return json.loads(file.read())

    @staticmethod
    def write_json(path: Union[str, Path], data: Any) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as file:
            file.write(json.dumps(data, indent=2) + "\n")

    @staticmethod
    def write_csv(path: Union[str, Path], columns: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
        """
        Missing values (None) are written as empty cells
        """

        with open(path, "w", encoding="utf-8", newline="") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow(["" if value is None else value for value in row])

    @staticmethod
    def check_parameters(expected_shapes: dict[str, tuple[int, int]], params: dict[str, np.ndarray]) -> None:
        missing = sorted(set(expected_shapes) - set(params))
        if missing:
            raise ShapeError(f"parameters missing for the configured model: {missing}")

        for name, shape in expected_shapes.items():
            if tuple(params[name].shape) != tuple(shape):
                raise ShapeError(
                    f"parameter shape does not match the configured model"
                    f" ({name}: expected {tuple(shape)}, got {tuple(params[name].shape)})"
                )

    @staticmethod
    def optional_float(value: Optional[float]) -> Optional[float]:
        return None if value is None else float(value)
