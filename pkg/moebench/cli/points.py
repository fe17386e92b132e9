"""
isoFLOP measurements from CSV: columns c_min, n, d, loss.
"""

from pathlib import Path
import pandas as pd
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error, InvalidInputError, ResourceError
from workbench.scaling.models import IsoFlopPoint


COLUMNS = ["c_min", "n", "d", "loss"]


def read_points(path: str | Path) -> Result[list[IsoFlopPoint], Error]:
    path = Path(path)
    try:
        df = pd.read_csv(path, comment="#", skipinitialspace=True, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        return Failure(ResourceError("cli.input_not_found", f"no input file at {path}"))
    except pd.errors.EmptyDataError:
        df = pd.DataFrame()
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        return Failure(ResourceError("cli.input_unreadable", f"cannot read {path}: {e}"))

    missing = [column for column in COLUMNS if column not in df.columns]
    if missing:
        return Failure(InvalidInputError(
            "cli.input_columns",
            f"{path}: missing columns {', '.join(missing)}",
            details={"missing": missing},
        ))

    values = df[COLUMNS].apply(pd.to_numeric, errors="coerce")
    bad = values.isna().any(axis=1)
    if bad.any():
        # Row numbers count the header as row 1
        number = int(bad.to_numpy().nonzero()[0][0]) + 2
        return Failure(InvalidInputError("cli.input_value", f"{path}: row {number} is not numeric"))

    points = []
    for c_min, n, d, loss in values.itertuples(index=False, name=None):
        point = IsoFlopPoint.create(float(c_min), float(n), float(d), float(loss))
        if not is_successful(point):
            return point
        points.append(point.unwrap())

    return Success(points)
